#include "crir/harness/oracles.hpp"

#include <algorithm>
#include <memory>
#include <random>

#include "crir/agent/agent.hpp"
#include "crir/numcore/gradcheck.hpp"

namespace crir::harness {

const std::vector<GoldenReward>& golden_reward_table() {
  // rating 1 or absent: -1; else (r - 1)^2, replaced on repeats by
  // clamp(1.1 - 0.2 * count, -1, 0.3); positive scores divided by 16
  static const std::vector<GoldenReward> table{
      {std::nullopt, 0, -1.0}, {1, 0, -1.0},    {1, 3, -1.0},    {2, 0, 0.0625},  {3, 0, 0.25},
      {4, 0, 0.5625},          {5, 0, 1.0},     {5, 1, 0.01875}, {4, 2, 0.01875}, {3, 3, 0.01875},
      {4, 4, 0.01875},         {5, 5, 0.00625}, {4, 6, -0.1},    {2, 7, -0.3},    {3, 8, -0.5},
      {5, 9, -0.7},            {4, 10, -0.9},   {3, 11, -1.0},   {2, 20, -1.0},   {std::nullopt, 5, -1.0},
  };
  return table;
}

namespace {

namespace nc = crir::numcore;
namespace sr = crir::staterep;

constexpr std::size_t kCatalog = 12, kUsers = 4, kDim = 4, kUserFeatures = 3;

sr::RepresentationConfig oracle_rep(bool discrete) {
  sr::RepresentationConfig c;
  c.kind = discrete ? EnvKind::kDiscrete : EnvKind::kContinuous;
  c.catalog_size = kCatalog;
  c.num_users = kUsers;
  c.item_feature_width = kDim;
  c.user_feature_width = kUserFeatures;
  c.repr_dim = kDim;
  c.activation_hidden = 3;
  return c;
}

struct OracleBatch {
  std::vector<std::shared_ptr<BehaviorLog>> logs;
  std::vector<replay::Transition> storage;
  std::vector<const replay::Transition*> ptrs;
  std::vector<double> weights;
  std::vector<sr::StateInput> histories;
};

OracleBatch oracle_batch(bool discrete, std::size_t n, nc::Rng& rng) {
  std::uniform_int_distribution<ItemId> item(0, kCatalog - 1);
  std::uniform_int_distribution<UserId> user(0, kUsers - 1);
  std::uniform_int_distribution<std::size_t> len(3, 11);
  std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.1, 1.0);
  auto vec = [&](std::size_t d) {
    std::vector<double> v(d);
    for (double& x : v) x = u(rng);
    return v;
  };
  OracleBatch b;
  for (std::size_t k = 0; k < n; ++k) {
    auto log = std::make_shared<BehaviorLog>();
    const std::size_t l = len(rng);
    for (std::size_t s = 0; s <= l; ++s) {
      BehaviorRecord r;
      if (discrete) {
        r.item = item(rng);
      } else {
        r.item = vec(kDim);
      }
      r.feedback = u(rng);
      r.step_index = static_cast<std::uint32_t>(s);
      log->push_back(std::move(r));
    }
    UserProfile profile;
    if (discrete) {
      profile = user(rng);
    } else {
      profile = vec(kUserFeatures);
    }
    b.storage.push_back({profile, HistoryView{log, l}, vec(kDim), u(rng), HistoryView{log, l + 1}, k % 4 == 0});
    b.logs.push_back(std::move(log));
    b.weights.push_back(w(rng));
  }
  for (const auto& t : b.storage) {
    b.ptrs.push_back(&t);
    b.histories.push_back({t.user, t.next_history.records()});
  }
  return b;
}

constexpr double kStep = 1e-6;

double check_all(const nc::ParamScalarFn& f, const std::vector<nc::Tensor*>& params) {
  double worst = 0.0;
  for (nc::Tensor* p : params) worst = std::max(worst, nc::finite_diff_check(f, *p, kStep));
  return worst;
}

}  // namespace

std::vector<GradientOracleResult> run_gradient_oracle(std::size_t points, std::uint64_t seed) {
  std::vector<GradientOracleResult> out{{"positional_infonce", points, 0.0},
                                        {"critic_td", points, 0.0},
                                        {"constrained_combined", points, 0.0},
                                        {"actor_objective", points, 0.0}};
  for (std::size_t k = 0; k < points; ++k) {
    nc::Rng rng(seed * 1000003 + k);
    const bool discrete = k % 2 == 0;
    agent::AgentConfig cfg;
    cfg.hidden = 5;
    cfg.mechanism = agent::Mechanism::kConstrained;
    cfg.gamma_prcl = k % 4 < 2 ? 0.5 : 1.0;
    agent::Agent ag(oracle_rep(discrete), cfg, rng);
    OracleBatch b = oracle_batch(discrete, 6, rng);
    const auto targets = ag.compute_targets(b.ptrs);
    const std::uint64_t sample_seed = rng();

    auto contrastive = [&](nc::Tape& tape) {
      prcl::Rng srng(sample_seed);
      return prcl::prcl_loss(tape, ag.representation(), b.histories, cfg.coefficient, srng, true).loss;
    };
    out[0].max_error = std::max(out[0].max_error, check_all(contrastive, ag.representation().encoder_parameters()));

    auto loss_params = ag.critic().parameters();
    for (nc::Tensor* p : ag.representation().parameters()) loss_params.push_back(p);

    prcl::Rng unused(0);
    auto critic = [&](nc::Tape& tape) {
      return ag.critic_loss(tape, b.ptrs, targets, b.weights, {}, unused, true, true).loss;
    };
    out[1].max_error = std::max(out[1].max_error, check_all(critic, loss_params));

    auto combined = [&](nc::Tape& tape) {
      prcl::Rng srng(sample_seed);
      return ag.critic_loss(tape, b.ptrs, targets, b.weights, b.histories, srng, true, true).loss;
    };
    out[2].max_error = std::max(out[2].max_error, check_all(combined, loss_params));

    nc::Tensor states({b.ptrs.size(), 2 * kDim});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (double& v : states.values()) v = u(rng);
    auto actor = [&](nc::Tape& tape) { return ag.actor_loss(tape, states); };
    out[3].max_error = std::max(out[3].max_error, check_all(actor, ag.actor().parameters()));
  }
  return out;
}

}  // namespace crir::harness
