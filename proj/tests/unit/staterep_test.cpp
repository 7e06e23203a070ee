#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "crir/numcore/gradcheck.hpp"
#include "crir/staterep/representation.hpp"

namespace nc = crir::numcore;
using crir::BehaviorRecord;
using crir::EnvKind;
using crir::ItemId;
using crir::UserId;
using crir::staterep::ForwardOptions;
using crir::staterep::RepresentationConfig;
using crir::staterep::RepresentationNetwork;
using crir::staterep::StateInput;
using nc::Tape;
using nc::Tensor;
using nc::Var;

namespace {

RepresentationConfig small_discrete(std::size_t max_history = 50) {
  RepresentationConfig c;
  c.kind = EnvKind::kDiscrete;
  c.catalog_size = 12;
  c.num_users = 4;
  c.repr_dim = 6;
  c.activation_hidden = 4;
  c.max_history = max_history;
  return c;
}

std::vector<BehaviorRecord> random_history(std::size_t n, nc::Rng& rng, std::size_t catalog = 12) {
  std::uniform_int_distribution<ItemId> item(0, static_cast<ItemId>(catalog - 1));
  std::uniform_real_distribution<double> fb(-1.0, 1.0);
  std::vector<BehaviorRecord> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({item(rng), fb(rng), static_cast<std::uint32_t>(i)});
  return out;
}

std::vector<double> values(const Var& v) { return {v.value().values().begin(), v.value().values().end()}; }

void zero(Tensor& t) { t.fill(0.0); }

}  // namespace

TEST(FeedbackBucket, EqualWidthOverRewardRange) {
  const crir::RewardRange r{-1.0, 1.0};
  EXPECT_EQ(crir::staterep::feedback_bucket(-1.0, r, 5), 0u);
  EXPECT_EQ(crir::staterep::feedback_bucket(-0.61, r, 5), 0u);
  EXPECT_EQ(crir::staterep::feedback_bucket(-0.59, r, 5), 1u);
  EXPECT_EQ(crir::staterep::feedback_bucket(0.0, r, 5), 2u);
  EXPECT_EQ(crir::staterep::feedback_bucket(0.99, r, 5), 4u);
  EXPECT_EQ(crir::staterep::feedback_bucket(1.0, r, 5), 4u);
}

TEST(EncodeBehavior, ZeroProjectionGivesZeroVector) {
  nc::Rng rng(1);
  RepresentationNetwork net(small_discrete(), rng);
  zero(net.projection().weight);
  zero(net.projection().bias);
  Tape tape;
  for (ItemId id : {0u, 5u, 11u}) {
    Var h = net.encode_behavior(tape, {id, 0.7, 0});
    for (double v : h.value().values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(EncodeBehavior, FeedbackBucketsSeparateSameItem) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nc::Rng rng(seed);
    RepresentationNetwork net(small_discrete(), rng);
    Tape tape;
    auto a = values(net.encode_behavior(tape, {3u, -1.0, 0}));
    auto b = values(net.encode_behavior(tape, {3u, 1.0, 0}));
    EXPECT_NE(a, b);
  }
}

TEST(EncodeBehavior, RejectsBadInputs) {
  nc::Rng rng(2);
  RepresentationNetwork net(small_discrete(), rng);
  Tape tape;
  EXPECT_THROW(net.encode_behavior(tape, {12u, 0.0, 0}), std::out_of_range);

  RepresentationConfig c;
  c.kind = EnvKind::kContinuous;
  c.item_feature_width = 3;
  c.user_feature_width = 2;
  c.repr_dim = 4;
  c.activation_hidden = 3;
  RepresentationNetwork cont(c, rng);
  EXPECT_THROW(cont.encode_behavior(tape, {std::vector<double>{1.0, 2.0}, 0.0, 0}), std::invalid_argument);
  EXPECT_NO_THROW(cont.encode_behavior(tape, {std::vector<double>{1.0, 2.0, 3.0}, 0.0, 0}));
}

TEST(ActivationUnit, ZeroNetworkGivesZeroWeight) {
  nc::Rng rng(3);
  RepresentationNetwork net(small_discrete(), rng);
  for (Tensor* p : {&net.activation_hidden().weight, &net.activation_hidden().bias,
                    &net.activation_output().weight, &net.activation_output().bias}) {
    zero(*p);
  }
  Tape tape;
  Var u = net.encode_user(tape, UserId{1});
  for (ItemId id : {0u, 7u}) {
    EXPECT_EQ(net.activation_unit(tape, u, net.encode_behavior(tape, {id, 0.2, 0})).value().item(), 0.0);
  }
}

TEST(ActivationUnit, DistinctBehaviorsGetDistinctWeights) {
  nc::Rng rng(4);
  RepresentationNetwork net(small_discrete(), rng);
  Tape tape;
  Var u = net.encode_user(tape, UserId{0});
  const double w1 = net.activation_unit(tape, u, net.encode_behavior(tape, {1u, 0.5, 0})).value().item();
  const double w2 = net.activation_unit(tape, u, net.encode_behavior(tape, {2u, 0.5, 0})).value().item();
  EXPECT_NE(w1, w2);
}

TEST(ActivationUnit, WeightDoesNotDependOnOtherBehaviors) {
  nc::Rng rng(5);
  RepresentationNetwork net(small_discrete(), rng);
  std::vector<BehaviorRecord> a{{4u, 0.5, 0}, {1u, -0.2, 1}, {9u, 0.9, 2}};
  std::vector<BehaviorRecord> b{{7u, 0.1, 0}, {9u, 0.9, 1}};
  Tape tape;
  std::vector<StateInput> batch{{UserId{2}, a}, {UserId{2}, b}};
  auto out = net.forward(tape, batch, ForwardOptions{});
  EXPECT_EQ(out.weights.value()[2], out.weights.value()[4]);
}

TEST(StateRepresentation, EmptyHistoryIsZero) {
  nc::Rng rng(6);
  RepresentationNetwork net(small_discrete(), rng);
  Tape tape;
  auto s = net.state_representation(tape, {UserId{0}, {}});
  EXPECT_EQ(s.state.value().shape(), (nc::Shape{1, 12}));
  for (double v : s.state.value().values()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(s.weights.empty());

  std::vector<StateInput> batch{{UserId{0}, {}}, {UserId{1}, {}}};
  auto out = net.forward(tape, batch, ForwardOptions{});
  EXPECT_EQ(out.states.value().shape(), (nc::Shape{2, 12}));
  for (double v : out.states.value().values()) EXPECT_EQ(v, 0.0);
}

TEST(StateRepresentation, SingleBehaviorIsProductAndWeightedCopy) {
  nc::Rng rng(7);
  RepresentationNetwork net(small_discrete(), rng);
  std::vector<BehaviorRecord> hist{{5u, 0.25, 0}};
  Tape tape;
  auto s = net.state_representation(tape, {UserId{3}, hist});
  Var u = net.encode_user(tape, UserId{3});
  Var h = net.encode_behavior(tape, hist[0]);
  ASSERT_EQ(s.weights.size(), 1u);
  const double w = s.weights[0];
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(s.state.value()[i], u.value()[i] * h.value()[i]);
    EXPECT_DOUBLE_EQ(s.state.value()[6 + i], w * h.value()[i]);
  }
}

TEST(StateRepresentation, TwoEqualBehaviorsWithHalfWeights) {
  nc::Rng rng(8);
  RepresentationNetwork net(small_discrete(), rng);
  // u = e1 for user 0; every h = (1, 1, 0, ...) via a zero projection with
  // that bias; constant weight 0.5 via a zero output layer with bias 0.5.
  Tensor& users = *net.state_parameters().front();
  zero(users);
  users.at(0, 0) = 1.0;
  zero(net.projection().weight);
  zero(net.projection().bias);
  net.projection().bias[0] = 1.0;
  net.projection().bias[1] = 1.0;
  zero(net.activation_output().weight);
  net.activation_output().bias[0] = 0.5;

  std::vector<BehaviorRecord> hist{{2u, 0.3, 0}, {8u, -0.4, 1}};
  Tape tape;
  auto s = net.state_representation(tape, {UserId{0}, hist});
  const std::vector<double> expected{1, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0};
  EXPECT_EQ(values(s.state), expected);

  std::vector<StateInput> batch{{UserId{0}, hist}};
  EXPECT_EQ(values(net.forward(tape, batch, ForwardOptions{}).states), expected);
}

TEST(StateRepresentation, WeightedHalfIsLinearInWeights) {
  nc::Rng rng(9);
  RepresentationNetwork net(small_discrete(), rng);
  auto hist = random_history(7, rng);
  std::vector<StateInput> batch{{UserId{1}, hist}};
  Tape t1;
  auto before = values(net.forward(t1, batch, ForwardOptions{}).states);
  for (double& v : net.activation_output().weight.values()) v *= 2.0;
  for (double& v : net.activation_output().bias.values()) v *= 2.0;
  Tape t2;
  auto after = values(net.forward(t2, batch, ForwardOptions{}).states);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(after[i], before[i]);
  for (std::size_t i = 6; i < 12; ++i) EXPECT_EQ(after[i], 2.0 * before[i]);
}

TEST(StateRepresentation, LongHistoryMatchesRecentSuffix) {
  nc::Rng rng(10);
  RepresentationNetwork net(small_discrete(5), rng);
  auto hist = random_history(9, rng);
  std::vector<BehaviorRecord> suffix(hist.end() - 5, hist.end());
  Tape tape;
  auto full = net.state_representation(tape, {UserId{2}, hist});
  auto tail = net.state_representation(tape, {UserId{2}, suffix});
  EXPECT_EQ(values(full.state), values(tail.state));
  EXPECT_EQ(full.weights.size(), 5u);

  std::vector<StateInput> a{{UserId{2}, hist}}, b{{UserId{2}, suffix}};
  EXPECT_EQ(values(net.forward(tape, a, ForwardOptions{}).states),
            values(net.forward(tape, b, ForwardOptions{}).states));
}

TEST(StateRepresentation, StateWidthIsTwiceRepresentationForAllLengths) {
  nc::Rng rng(11);
  RepresentationNetwork net(small_discrete(), rng);
  for (std::size_t n : {0u, 1u, 3u, 50u, 64u}) {
    auto hist = random_history(n, rng);
    Tape tape;
    auto s = net.state_representation(tape, {UserId{0}, hist});
    EXPECT_EQ(s.state.value().size(), 12u);
    EXPECT_EQ(s.weights.size(), std::min<std::size_t>(n, 50));
  }
}

// The batched route splits the projection and the first activation layer by
// input block; it must agree with the direct per-behavior route.
TEST(StateRepresentation, BatchedRouteMatchesDirectRoute) {
  nc::Rng rng(12);
  RepresentationNetwork net(small_discrete(), rng);
  net.activation_dice().running_mean = Tensor::vector({0.1, -0.2, 0.05, 0.3});
  net.activation_dice().running_var = Tensor::vector({0.5, 1.5, 0.8, 2.0});
  std::vector<std::vector<BehaviorRecord>> hists;
  for (std::size_t n : {4u, 0u, 1u, 9u}) hists.push_back(random_history(n, rng));
  std::vector<StateInput> batch;
  for (std::size_t s = 0; s < hists.size(); ++s) batch.push_back({UserId(s), hists[s]});

  Tape tape;
  auto out = net.forward(tape, batch, ForwardOptions{});
  std::size_t row = 0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    auto direct = net.state_representation(tape, batch[s]);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out.states.value().at(s, i), direct.state.value()[i], 1e-12);
    for (double w : direct.weights) EXPECT_NEAR(out.weights.value()[row++], w, 1e-12);
  }
  EXPECT_EQ(row, out.num_rows());
}

TEST(StateRepresentation, ContinuousBatchedRouteMatchesDirectRoute) {
  RepresentationConfig c;
  c.kind = EnvKind::kContinuous;
  c.item_feature_width = 3;
  c.user_feature_width = 2;
  c.repr_dim = 4;
  c.activation_hidden = 3;
  c.reward_range = {0.0, 1.0};
  nc::Rng rng(13);
  RepresentationNetwork net(c, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<BehaviorRecord> hist;
  for (std::uint32_t i = 0; i < 5; ++i) hist.push_back({std::vector<double>{u(rng), u(rng), u(rng)}, 0.2 * i, i});
  std::vector<StateInput> batch{{std::vector<double>{0.3, -0.7}, hist}};
  Tape tape;
  auto out = net.forward(tape, batch, ForwardOptions{});
  auto direct = net.state_representation(tape, batch[0]);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out.states.value()[i], direct.state.value()[i], 1e-12);
}

TEST(StateRepresentation, GradientReachesEveryParameter) {
  nc::Rng rng(14);
  RepresentationNetwork net(small_discrete(), rng);
  std::vector<std::vector<BehaviorRecord>> hists{random_history(5, rng), random_history(3, rng),
                                                 random_history(6, rng)};
  std::vector<StateInput> batch;
  for (std::size_t s = 0; s < hists.size(); ++s) batch.push_back({UserId(s), hists[s]});
  Tensor readout({3, 12});
  std::uniform_real_distribution<double> dist(-1, 1);
  for (double& v : readout.values()) v = dist(rng);

  ForwardOptions opt;
  opt.mode = nc::DiceMode::kTrain;
  opt.train_encoder = true;
  opt.train_state = true;
  auto f = [&](Tape& tape) {
    auto out = net.forward(tape, batch, opt);
    return nc::sum(nc::mul(out.states, tape.constant(readout)));
  };
  for (Tensor* p : net.parameters()) {
    EXPECT_LT(nc::finite_diff_check(f, *p, 1e-6), 1e-4) << nc::shape_string(p->shape());
  }
  // Every parameter actually receives a nonzero gradient.
  Tape tape;
  tape.backward(f(tape));
  for (Tensor* p : net.parameters()) {
    double norm = 0.0;
    for (double g : p->grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << nc::shape_string(p->shape());
    p->zero_grad();
  }
}

TEST(StateRepresentation, DetachedWeightsCarryNoEncoderGradient) {
  nc::Rng rng(15);
  RepresentationNetwork net(small_discrete(), rng);
  auto hist = random_history(6, rng);
  std::vector<StateInput> batch{{UserId{0}, hist}};
  ForwardOptions opt;
  opt.train_encoder = true;
  opt.weights_need_grad = false;
  opt.need_state = false;
  Tape tape;
  auto out = net.forward(tape, batch, opt);
  EXPECT_FALSE(out.states.valid());
  EXPECT_FALSE(tape.needs_grad(out.weights));
  EXPECT_TRUE(tape.needs_grad(out.behaviors));
}
