#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crir/numcore/adam.hpp"
#include "crir/numcore/gradcheck.hpp"
#include "crir/numcore/layers.hpp"
#include "crir/numcore/ops.hpp"

namespace nc = crir::numcore;
using nc::Tape;
using nc::Tensor;
using nc::Var;

namespace {

Tensor random_tensor(nc::Shape shape, nc::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  EXPECT_THROW(Tensor({0, 2}), std::invalid_argument);
  Tensor t({2, 3}, true);
  EXPECT_EQ(t.grad().size(), 6u);
}

TEST(Backward, SquareHasDerivativeSix) {
  Tensor x = Tensor::scalar(3.0, true);
  Tape tape;
  Var v = tape.param(x);
  tape.backward(nc::mul(v, v));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SumHasUnitGradients) {
  Tensor x = Tensor::scalar(-2.5, true);
  Tensor y = Tensor::scalar(7.0, true);
  Tape tape;
  tape.backward(nc::add(tape.param(x), tape.param(y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(y.grad()[0], 1.0);
}

TEST(Backward, MatrixVectorProductGradientIsRowBroadcast) {
  Tensor w = Tensor::matrix(2, 2, {0.3, -1.2, 2.0, 0.5}, true);
  Tensor h = Tensor::matrix(1, 2, {1.0, 1.0});
  Tape tape;
  tape.backward(nc::sum(nc::linear(tape.constant(h), tape.param(w))));
  for (double g : w.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, UnreachableParameterKeepsZeroGrad) {
  Tensor x = Tensor::scalar(1.5, true);
  Tensor unused = Tensor::scalar(4.0, true);
  Tape tape;
  tape.param(unused);
  Var v = tape.param(x);
  tape.backward(nc::square(v));
  EXPECT_DOUBLE_EQ(unused.grad()[0], 0.0);
}

TEST(Backward, RejectsNonScalarRoot) {
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  Tape tape;
  Var v = tape.param(x);
  EXPECT_THROW(tape.backward(v), std::invalid_argument);
}

TEST(Backward, RejectsForeignVar) {
  Tape a, b;
  Var x = a.constant(Tensor::scalar(1.0));
  EXPECT_THROW(b.backward(x), std::invalid_argument);
}

TEST(Ops, ShapeMismatchIsRejectedBeforeWork) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 2}));
  const auto nodes = tape.size();
  EXPECT_THROW(nc::add(a, b), std::invalid_argument);
  EXPECT_THROW(nc::linear(a, b), std::invalid_argument);
  EXPECT_THROW(nc::gather_rows(a, {5}), std::invalid_argument);
  EXPECT_EQ(tape.size(), nodes);
}

TEST(Ops, SegmentMeanLeavesEmptySegmentsAtZero) {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  Var m = nc::segment_mean(x, {0, 2, 2, 3});
  const Tensor& v = m.value();
  EXPECT_DOUBLE_EQ(v.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(v.at(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(v.at(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(v.at(2, 1), 6.0);
}

TEST(Ops, SegmentLogSumExpIsStable) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({1000.0, 1000.0, -3.0}));
  Var y = nc::segment_logsumexp(x, {0, 2, 3});
  EXPECT_NEAR(y.value()[0], 1000.0 + std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(y.value()[1], -3.0);
  EXPECT_THROW(nc::segment_logsumexp(x, {0, 0, 3}), std::invalid_argument);
}

TEST(FiniteDiff, SquareAtThree) {
  const double err = nc::finite_diff_check(
      [](Tape&, Var x) { return nc::sum(nc::square(x)); }, Tensor::scalar(3.0), 1e-4);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(nc::finite_diff_check([](Tape&, Var x) { return nc::sum(x); }, Tensor::scalar(1.0), 0.0),
               std::invalid_argument);
}

TEST(FiniteDiff, RejectsNonFiniteFunction) {
  EXPECT_THROW(nc::finite_diff_check([](Tape&, Var x) { return nc::sum(nc::scale(nc::exp(x), 1e300)); },
                                     Tensor::scalar(800.0)),
               std::domain_error);
}

// Every differentiable op composed into one scalar, checked at 100 seeds.
TEST(FiniteDiff, AllOpsAgreeWithCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    nc::Rng rng(seed);
    Tensor a = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor b = random_tensor({5}, rng);
    Tensor m = random_tensor({5, 2}, rng);
    Tensor v = random_tensor({2}, rng);
    Tensor rows_w = random_tensor({4}, rng, 0.2, 1.5);
    nc::Dice unit(5);
    unit.running_mean = random_tensor({5}, rng);
    unit.running_var = random_tensor({5}, rng, 0.5, 2.0);
    Tensor pos = random_tensor({3}, rng, 0.5, 2.0);

    auto f = [&](Tape& t) {
      Var x = t.param(a);
      Var h = nc::linear(x, t.param(w), t.param(b));
      Var d1 = nc::dice(h, unit, nc::DiceMode::kTrain);
      Var d2 = nc::dice(h, unit, nc::DiceMode::kEval);
      Var y = nc::matmul(nc::add(d1, nc::tanh(d2)), t.param(m));
      Var g = nc::gather_rows(y, {0, 3, 3, 1});
      Var s = nc::segment_mean(nc::scale_rows(g, t.param(rows_w)), {0, 1, 1, 4});
      Var c = nc::concat_cols({s, nc::sigmoid(nc::slice_cols(s, 0, 1))});
      Var logits = nc::row_dot(nc::slice_cols(c, 0, 2), t.param(v));
      Var l = nc::add(nc::logsumexp(logits), nc::scale(nc::sum(nc::square(c)), 0.3));
      Var p = nc::sum(nc::log(nc::add_scalar(nc::exp(nc::scale(t.param(pos), 0.5)), 1.0)));
      Var seg = nc::mean(nc::segment_sum(g, {0, 2, 4}));
      Var vv = nc::exp(nc::scale(nc::dot(t.param(v), t.param(v)), 0.1));
      Var rd = nc::rowwise_dot(g, nc::tanh(g));
      Var sl = nc::sum(nc::segment_logsumexp(rd, {0, 1, 4}));
      return nc::add(nc::add(nc::add(l, p), nc::sub(seg, vv)), sl);
    };
    for (Tensor* p : {&a, &w, &b, &m, &v, &rows_w, &pos, &unit.alpha}) {
      EXPECT_LT(nc::finite_diff_check(f, *p, 1e-6), 1e-4) << "seed " << seed;
    }
  }
}

TEST(Dice, AtBatchMeanIsHalfwayBetweenBranches) {
  Tape tape;
  Tensor x = Tensor::matrix(1, 3, {0.4, -1.0, 2.0});
  Tensor alpha = Tensor::vector({0.25, 0.5, -0.3});
  std::vector<double> mean{0.4, -1.0, 2.0}, var{1.0, 0.0, 3.0};
  Var out = nc::dice(tape.constant(x), tape.constant(alpha), mean, var);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(out.value()[c], 0.5 * x[c] * (1.0 + alpha[c]), 1e-15);
  }
}

TEST(Dice, FarAboveMeanIsIdentity) {
  Tape tape;
  Tensor x = Tensor::matrix(1, 1, {50.0});
  std::vector<double> mean{0.0}, var{1.0};
  Var out = nc::dice(tape.constant(x), tape.constant(Tensor::vector({0.25})), mean, var);
  EXPECT_NEAR(out.value()[0], 50.0, 1e-12);
}

TEST(Dice, UnitAlphaIsIdentity) {
  nc::Rng rng(3);
  nc::Dice unit(4, 1.0);
  Tensor x = random_tensor({6, 4}, rng, -3, 3);
  Tape tape;
  Var out = nc::dice(tape.constant(x), unit, nc::DiceMode::kTrain);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out.value()[i], x[i], 1e-15);
}

TEST(Dice, SingleRowFallsBackToRunningStatistics) {
  nc::Dice unit(2);
  unit.running_mean = Tensor::vector({0.5, -0.5});
  Tape tape;
  Var out = nc::dice(tape.constant(Tensor::matrix(1, 2, {0.5, -0.5})), unit, nc::DiceMode::kTrain);
  EXPECT_NEAR(out.value()[0], 0.5 * 0.5 * 1.25, 1e-15);
  EXPECT_DOUBLE_EQ(unit.running_mean[0], 0.5);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0}, true);
  nc::Adam opt({&p});
  opt.step();
  EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()),
            (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.7, true);
  nc::Adam opt({&p});
  p.grad()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  EXPECT_NEAR(0.7 - p[0], 0.001, 1e-10);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(opt.state().step_count, 1u);
}

TEST(Adam, SecondMomentAccumulates) {
  Tensor p = Tensor::scalar(0.0, true);
  nc::Adam opt({&p});
  p.grad()[0] = 0.5;
  opt.step();
  const double v1 = opt.state().second_moment[0][0];
  p.grad()[0] = 0.5;
  opt.step();
  EXPECT_GT(opt.state().second_moment[0][0], v1);
  EXPECT_EQ(opt.state().step_count, 2u);
}

TEST(Adam, RejectsParameterWithoutGradient) {
  Tensor p = Tensor::scalar(1.0, false);
  auto state = nc::make_adam_state(std::vector<Tensor*>{&p});
  std::vector<Tensor*> params{&p};
  EXPECT_THROW(nc::adam_step(params, state), std::invalid_argument);
}

TEST(Determinism, SameSeedGivesBitIdenticalGradients) {
  auto run = [](std::uint64_t seed) {
    nc::Rng rng(seed);
    nc::Linear layer(6, 4, rng);
    nc::Dice unit(4);
    Tensor x = random_tensor({5, 6}, rng);
    Tape tape;
    Var y = nc::dice(layer.forward(tape, tape.constant(x)), unit, nc::DiceMode::kTrain);
    tape.backward(nc::sum(nc::square(y)));
    std::vector<double> out(y.value().values().begin(), y.value().values().end());
    out.insert(out.end(), layer.weight.grad().begin(), layer.weight.grad().end());
    return out;
  };
  EXPECT_EQ(run(11), run(11));
}
