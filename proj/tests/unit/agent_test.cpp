#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "crir/agent/agent.hpp"
#include "crir/numcore/gradcheck.hpp"

namespace ag = crir::agent;
namespace nc = crir::numcore;
using crir::BehaviorLog;
using crir::BehaviorRecord;
using crir::HistoryView;
using crir::ItemId;
using crir::UserId;
using crir::replay::Transition;
using crir::staterep::RepresentationConfig;
using crir::staterep::StateInput;
using nc::Tape;
using nc::Tensor;
using nc::Var;

namespace {

RepresentationConfig small_rep() {
  RepresentationConfig c;
  c.catalog_size = 15;
  c.num_users = 3;
  c.repr_dim = 5;
  c.activation_hidden = 4;
  return c;
}

ag::AgentConfig small_agent(ag::Mechanism mech = ag::Mechanism::kAuxiliary, double gamma_prcl = 0.0,
                            ag::Routing routing = ag::Routing::kBoth) {
  ag::AgentConfig c;
  c.hidden = 6;
  c.mechanism = mech;
  c.gamma_prcl = gamma_prcl;
  c.routing = routing;
  return c;
}

// Transitions from a few random episodes, histories of varied length.
struct Batch {
  std::vector<std::shared_ptr<BehaviorLog>> logs;
  std::vector<Transition> storage;
  std::vector<const Transition*> ptrs;
  std::vector<double> weights;
};

Batch make_batch(std::size_t n, std::size_t dim, std::uint64_t seed) {
  nc::Rng rng(seed);
  std::uniform_int_distribution<ItemId> item(0, 14);
  std::uniform_int_distribution<UserId> user(0, 2);
  std::uniform_int_distribution<std::size_t> len(0, 9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> w(0.2, 1.0);
  Batch b;
  for (std::size_t k = 0; k < n; ++k) {
    auto log = std::make_shared<BehaviorLog>();
    const std::size_t l = len(rng);
    for (std::size_t s = 0; s <= l; ++s) log->push_back({item(rng), u(rng), static_cast<std::uint32_t>(s)});
    std::vector<double> action(dim);
    for (double& x : action) x = u(rng);
    b.storage.push_back({user(rng), HistoryView{log, l}, action, u(rng), HistoryView{log, l + 1}, k % 3 == 0});
    b.logs.push_back(log);
    b.weights.push_back(w(rng));
  }
  for (const auto& t : b.storage) b.ptrs.push_back(&t);
  return b;
}

std::vector<StateInput> long_histories(const Batch& b) {
  std::vector<StateInput> out;
  for (const auto& t : b.storage) out.push_back({t.user, t.next_history.records()});
  return out;
}

std::vector<std::vector<double>> snapshot(const std::vector<Tensor*>& params) {
  std::vector<std::vector<double>> out;
  for (const Tensor* p : params) out.emplace_back(p->values().begin(), p->values().end());
  return out;
}

std::vector<Tensor*> everything(ag::Agent& a) {
  auto out = a.representation().parameters();
  for (auto* m : {&a.actor(), &a.critic(), &a.actor_target(), &a.critic_target()}) {
    for (Tensor* p : m->state_tensors()) out.push_back(p);
  }
  return out;
}

std::size_t mlp_count(std::size_t in, std::size_t h, std::size_t out) {
  // two hidden linear layers with bias, one Dice slope per hidden unit each,
  // output layer with bias
  return (in * h + h) + h + (h * h + h) + h + (h * out + out);
}

}  // namespace

TEST(Networks, ParameterCountsMatchArchitecture) {
  RepresentationConfig rep;
  rep.catalog_size = 20;
  rep.num_users = 4;
  nc::Rng rng(1);
  ag::Agent a(rep, ag::AgentConfig{}, rng);
  EXPECT_EQ(a.actor().parameter_count(), mlp_count(200, 128, 100));
  EXPECT_EQ(a.critic().parameter_count(), mlp_count(300, 128, 1));
  EXPECT_EQ(a.actor().parameter_count(), 25600u + 128 + 128 + 16384 + 128 + 128 + 12800 + 100);
  EXPECT_EQ(a.actor_target().parameter_count(), a.actor().parameter_count());
}

TEST(Networks, ActorOutputInTanhRange) {
  nc::Rng rng(2);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto b = make_batch(20, 5, 3);
  for (const auto& in : long_histories(b)) {
    for (double x : a.policy(in)) {
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
  }
}

TEST(SoftUpdate, ClosedFormAfterThousandSteps) {
  const double tau = 0.001;
  nc::Rng rng(4);
  Tensor online({3, 4});
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (double& v : online.values()) v = u(rng);
  Tensor target({3, 4});
  std::vector<Tensor*> on{&online}, tg{&target};
  for (int k = 0; k < 1000; ++k) ag::soft_update(on, tg, tau);
  const double factor = 1.0 - std::pow(1.0 - tau, 1000);
  for (std::size_t i = 0; i < online.size(); ++i) EXPECT_NEAR(target[i], online[i] * factor, 1e-12);
}

TEST(SoftUpdate, EndpointsAndSingleStep) {
  Tensor online = Tensor::vector({1.0, -2.0});
  Tensor target = Tensor::vector({0.0, 5.0});
  std::vector<Tensor*> on{&online}, tg{&target};
  ag::soft_update(on, tg, 0.0);
  EXPECT_EQ(target[1], 5.0);
  ag::soft_update(on, tg, 0.001);
  EXPECT_EQ(target[0], 0.001);
  ag::soft_update(on, tg, 1.0);
  EXPECT_EQ(target[0], 1.0);
  EXPECT_EQ(target[1], -2.0);
}

TEST(SoftUpdate, RejectsShapeMismatch) {
  Tensor a({2, 3}), b({3, 2}), c({2, 3});
  std::vector<Tensor*> on{&a}, tg{&b}, two{&b, &c};
  EXPECT_THROW(ag::soft_update(on, tg, 0.5), std::invalid_argument);
  EXPECT_THROW(ag::soft_update(on, two, 0.5), std::invalid_argument);
}

TEST(SoftUpdate, TargetsTrackDiceStatistics) {
  nc::Rng rng(5);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto online = a.critic().state_tensors();
  auto target = a.critic_target().state_tensors();
  ASSERT_EQ(online.size(), 12u);
  online.back()->fill(3.0);  // a running variance
  a.soft_update_targets();
  EXPECT_DOUBLE_EQ((*target.back())[0], 0.001 * 3.0 + 0.999 * 1.0);
}

TEST(TdTarget, Examples) {
  EXPECT_DOUBLE_EQ(ag::td_target(1.0, 0.9, 2.0, false) - 2.0, 0.8);
  EXPECT_EQ(ag::td_target(1.0, 0.9, 2.0, true) - 1.0, 0.0);
  EXPECT_EQ(ag::td_target(0.3, 0.0, 7.0, false), 0.3);
}

TEST(ResolveAction, ExactEmbeddingAndTies) {
  nc::Rng rng(6);
  Tensor emb({10, 4});
  std::normal_distribution<double> g;
  for (double& v : emb.values()) v = g(rng);
  std::vector<double> a(emb.values().begin() + 28, emb.values().begin() + 32);
  EXPECT_EQ(ag::resolve_action(a, emb, 1), std::vector<ItemId>{7});

  Tensor axis = Tensor::matrix(4, 2, {0, 1, 0, 2, 0, -1, 0, 0.5});
  EXPECT_EQ(ag::resolve_action(std::vector<double>{1.0, 0.0}, axis, 3), (std::vector<ItemId>{0, 1, 2}));
  EXPECT_EQ(ag::resolve_action(std::vector<double>{0.0, 0.0}, axis, 2), (std::vector<ItemId>{0, 1}));
}

TEST(ResolveAction, CosineOrder) {
  Tensor cat = Tensor::matrix(3, 2, {1, 0, 0, 1, -1, 0});
  EXPECT_EQ(ag::resolve_action(std::vector<double>{0.9, 0.1}, cat, 2), (std::vector<ItemId>{0, 1}));
  Tensor with_zero = Tensor::matrix(3, 2, {0, 0, -1, 0, 1, 1});
  // zero row scores 0, beating the negative cosine of row 1
  EXPECT_EQ(ag::resolve_action(std::vector<double>{1.0, 0.0}, with_zero, 3), (std::vector<ItemId>{2, 0, 1}));
  EXPECT_THROW(ag::resolve_action(std::vector<double>{1.0}, cat, 1), std::invalid_argument);
}

TEST(SelectAction, ZeroNoiseIsPolicyAndOutputsClipped) {
  nc::Rng rng(7);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto b = make_batch(5, 5, 8);
  const auto inputs = long_histories(b);
  ag::Rng noise(9);
  EXPECT_EQ(a.select_action(inputs[0], 0.0, noise), a.policy(inputs[0]));
  for (const auto& in : inputs) {
    for (double x : a.select_action(in, 5.0, noise)) {
      EXPECT_GE(x, -1.0);
      EXPECT_LE(x, 1.0);
    }
  }
  ag::Rng n1(10), n2(10);
  EXPECT_EQ(a.select_action(inputs[1], 0.1, n1), a.select_action(inputs[1], 0.1, n2));
}

TEST(CriticLoss, MatchesFiniteDifferences) {
  nc::Rng rng(11);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto b = make_batch(8, 5, 12);
  const auto y = a.compute_targets(b.ptrs);
  ag::Rng prcl_rng(0);
  auto f = [&](Tape& tape) {
    return a.critic_loss(tape, b.ptrs, y, b.weights, {}, prcl_rng, true, true).loss;
  };
  for (Tensor* p : a.critic().parameters()) EXPECT_LT(nc::finite_diff_check(f, *p), 1e-4);
  for (Tensor* p : a.representation().parameters()) EXPECT_LT(nc::finite_diff_check(f, *p), 1e-4);
}

TEST(CriticLoss, ConstrainedCombinedLossMatchesFiniteDifferences) {
  nc::Rng rng(13);
  ag::Agent a(small_rep(), small_agent(ag::Mechanism::kConstrained, 0.5), rng);
  auto b = make_batch(8, 5, 14);
  const auto y = a.compute_targets(b.ptrs);
  const auto hist = long_histories(b);
  std::size_t samples = 0;
  auto f = [&](Tape& tape) {
    ag::Rng prcl_rng(15);  // same contrastive samples on every evaluation
    auto cl = a.critic_loss(tape, b.ptrs, y, b.weights, hist, prcl_rng, true, true);
    samples = cl.prcl_samples;
    return cl.loss;
  };
  for (Tensor* p : a.representation().encoder_parameters()) EXPECT_LT(nc::finite_diff_check(f, *p), 1e-4);
  EXPECT_GT(samples, 0u);
}

TEST(CriticLoss, ZeroTdErrorGivesZeroGradient) {
  nc::Rng rng(16);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto b = make_batch(6, 5, 17);
  ag::Rng prcl_rng(0);
  std::vector<double> y(6, 0.0);
  {
    Tape tape;
    auto cl = a.critic_loss(tape, b.ptrs, y, b.weights, {}, prcl_rng, true, true);
    for (std::size_t i = 0; i < 6; ++i) y[i] = cl.q.value()[i];
  }
  Tape tape;
  auto cl = a.critic_loss(tape, b.ptrs, y, b.weights, {}, prcl_rng, true, true);
  tape.backward(cl.loss);
  for (Tensor* p : a.critic().parameters()) {
    for (double g : p->grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(CriticUpdate, ConstrainedWithZeroGammaEqualsAuxiliary) {
  nc::Rng r1(18), r2(18);
  ag::Agent aux(small_rep(), small_agent(ag::Mechanism::kAuxiliary), r1);
  ag::Agent con(small_rep(), small_agent(ag::Mechanism::kConstrained, 0.0), r2);
  auto b = make_batch(10, 5, 19);
  const auto hist = long_histories(b);
  ag::Rng p1(20), p2(20);
  for (int step = 0; step < 3; ++step) {
    auto ra = aux.critic_update(b.ptrs, b.weights, {}, p1);
    auto rc = con.critic_update(b.ptrs, b.weights, hist, p2);
    EXPECT_EQ(ra.td_abs, rc.td_abs);
    EXPECT_GT(rc.prcl_samples, 0u);
    aux.actor_update(ra.states);
    con.actor_update(rc.states);
    aux.soft_update_targets();
    con.soft_update_targets();
  }
  EXPECT_EQ(snapshot(everything(aux)), snapshot(everything(con)));
}

TEST(Routing, OnlyPrclKeepsEncoderFixedDuringRlPass) {
  nc::Rng rng(21);
  ag::Agent a(small_rep(), small_agent(ag::Mechanism::kAuxiliary, 0.0, ag::Routing::kOnlyPrcl), rng);
  auto b = make_batch(10, 5, 22);
  ag::Rng prcl_rng(23);
  const auto enc = snapshot(a.representation().encoder_parameters());
  const auto state = snapshot(a.representation().state_parameters());
  auto res = a.critic_update(b.ptrs, b.weights, {}, prcl_rng);
  EXPECT_GT(res.grad_norm_rl, 0.0);  // computed for logging, not applied
  EXPECT_EQ(snapshot(a.representation().encoder_parameters()), enc);
  EXPECT_NE(snapshot(a.representation().state_parameters()), state);
  auto p = a.prcl_step(long_histories(b), prcl_rng);
  EXPECT_TRUE(p.applied);
  EXPECT_NE(snapshot(a.representation().encoder_parameters()), enc);
}

TEST(Routing, OnlyRlKeepsEncoderFixedDuringPrclPass) {
  nc::Rng rng(24);
  ag::Agent a(small_rep(), small_agent(ag::Mechanism::kAuxiliary, 0.0, ag::Routing::kOnlyRl), rng);
  auto b = make_batch(10, 5, 25);
  ag::Rng prcl_rng(26);
  const auto enc = snapshot(a.representation().encoder_parameters());
  auto p = a.prcl_step(long_histories(b), prcl_rng);
  EXPECT_FALSE(p.applied);
  EXPECT_GT(p.grad_norm, 0.0);
  EXPECT_EQ(snapshot(a.representation().encoder_parameters()), enc);
  a.critic_update(b.ptrs, b.weights, {}, prcl_rng);
  EXPECT_NE(snapshot(a.representation().encoder_parameters()), enc);
}

TEST(Routing, ConstrainedOnlyPrclBlocksRlTerm) {
  nc::Rng r1(27), r2(27);
  // With gamma 0 the contrastive term contributes nothing, so under only_PRCL
  // the encoder must not move at all.
  ag::Agent a(small_rep(), small_agent(ag::Mechanism::kConstrained, 0.0, ag::Routing::kOnlyPrcl), r1);
  auto b = make_batch(10, 5, 28);
  ag::Rng prcl_rng(29);
  const auto enc = snapshot(a.representation().encoder_parameters());
  a.critic_update(b.ptrs, b.weights, long_histories(b), prcl_rng);
  EXPECT_EQ(snapshot(a.representation().encoder_parameters()), enc);

  ag::Agent c(small_rep(), small_agent(ag::Mechanism::kConstrained, 1.0, ag::Routing::kOnlyPrcl), r2);
  const auto enc_c = snapshot(c.representation().encoder_parameters());
  c.critic_update(b.ptrs, b.weights, long_histories(b), prcl_rng);
  EXPECT_NE(snapshot(c.representation().encoder_parameters()), enc_c);
}

TEST(ActorLoss, MatchesFiniteDifferences) {
  nc::Rng rng(30);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto b = make_batch(8, 5, 31);
  ag::Rng prcl_rng(0);
  auto res = a.critic_update(b.ptrs, b.weights, {}, prcl_rng);
  auto f = [&](Tape& tape) { return a.actor_loss(tape, res.states); };
  for (Tensor* p : a.actor().parameters()) EXPECT_LT(nc::finite_diff_check(f, *p), 1e-4);
}

namespace {

// Critic computing exactly c * a_1: identity Dice (slope 1), unit 0 routes
// action coordinate 0, every other weight zero.
void make_linear_critic(ag::Mlp& critic, std::size_t action_col, double c) {
  for (Tensor* p : critic.parameters()) p->fill(0.0);
  critic.layer(0).weight.at(0, action_col) = 1.0;
  critic.layer(1).weight.at(0, 0) = 1.0;
  critic.layer(2).weight.at(0, 0) = c;
  auto params = critic.parameters();
  params[2]->fill(1.0);  // Dice slopes
  params[5]->fill(1.0);
}

}  // namespace

TEST(ActorLoss, LinearCriticGradientByHand) {
  nc::Rng rng(32);
  ag::Agent a(small_rep(), small_agent(), rng);
  const double c = 0.7;
  make_linear_critic(a.critic(), 10, c);
  Tensor states({1, 10});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : states.values()) v = u(rng);

  Tape probe;
  Var act = a.actor().forward(probe, probe.constant(states), nc::DiceMode::kEval, false);
  const double a1 = act.value()[0];

  Tape tape;
  Var loss = a.actor_loss(tape, states);
  EXPECT_DOUBLE_EQ(loss.value().item(), -c * a1);
  tape.backward(loss);
  auto g = a.actor().layer(2).bias.grad();
  // loss = -c * tanh(z_1): d/db_1 = -c (1 - tanh^2)
  EXPECT_NEAR(g[0], -c * (1.0 - a1 * a1), 1e-14);
  for (std::size_t k = 1; k < g.size(); ++k) EXPECT_EQ(g[k], 0.0);
}

TEST(ActorLoss, ActionIndependentCriticGivesZeroGradient) {
  nc::Rng rng(33);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto& w = a.critic().layer(0).weight;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t col = 10; col < 15; ++col) w.at(r, col) = 0.0;
  }
  Tensor states({4, 10});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : states.values()) v = u(rng);
  Tape tape;
  tape.backward(a.actor_loss(tape, states));
  for (Tensor* p : a.actor().parameters()) {
    for (double g : p->grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(ActorUpdate, ZeroLearningRateLeavesActor) {
  nc::Rng rng(34);
  auto cfg = small_agent();
  cfg.learning_rate = 0.0;
  ag::Agent a(small_rep(), cfg, rng);
  auto b = make_batch(6, 5, 35);
  ag::Rng prcl_rng(0);
  auto res = a.critic_update(b.ptrs, b.weights, {}, prcl_rng);
  const auto before = snapshot(a.actor().parameters());
  a.actor_update(res.states);
  EXPECT_EQ(snapshot(a.actor().parameters()), before);
}

TEST(ActorUpdate, TouchesActorOnly) {
  nc::Rng rng(36);
  ag::Agent a(small_rep(), small_agent(), rng);
  auto b = make_batch(6, 5, 37);
  ag::Rng prcl_rng(0);
  auto res = a.critic_update(b.ptrs, b.weights, {}, prcl_rng);
  const auto critic = snapshot(a.critic().state_tensors());
  const auto rep = snapshot(a.representation().parameters());
  const auto actor = snapshot(a.actor().parameters());
  a.actor_update(res.states);
  EXPECT_EQ(snapshot(a.critic().state_tensors()), critic);
  EXPECT_EQ(snapshot(a.representation().parameters()), rep);
  EXPECT_NE(snapshot(a.actor().parameters()), actor);
}
