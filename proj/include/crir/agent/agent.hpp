#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "crir/numcore/adam.hpp"
#include "crir/numcore/layers.hpp"
#include "crir/prcl/prcl.hpp"
#include "crir/replay/buffer.hpp"
#include "crir/staterep/representation.hpp"

namespace crir::agent {

using numcore::DiceMode;
using numcore::Tape;
using numcore::Tensor;
using numcore::Var;
using Rng = std::mt19937_64;

// Linear -> Dice -> Linear -> Dice -> Linear, optionally tanh on the output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, bool tanh_output, numcore::Rng& rng);

  Var forward(Tape& tape, Var x, DiceMode mode, bool trainable);
  std::vector<Tensor*> parameters();
  // Parameters plus Dice running statistics, for target tracking.
  std::vector<Tensor*> state_tensors();
  void commit_statistics();
  std::size_t parameter_count();
  std::size_t in_features() const { return l1_.in_features(); }
  std::size_t out_features() const { return l3_.out_features(); }

  numcore::Linear& layer(std::size_t i) { return i == 0 ? l1_ : (i == 1 ? l2_ : l3_); }

 private:
  numcore::Linear l1_, l2_, l3_;
  numcore::Dice d1_, d2_;
  bool tanh_output_ = false;
};

// target <- tau * online + (1 - tau) * target, element by element.
void soft_update(std::span<Tensor* const> online, std::span<Tensor* const> target, double tau);

// r + gamma * V' unless the transition is terminal.
double td_target(double reward, double gamma, double next_value, bool done);

// Ids of the top_k catalog rows by cosine similarity to action; ties go to
// the lower id, zero vectors score 0.
std::vector<ItemId> resolve_action(std::span<const double> action, const Tensor& embeddings, std::size_t top_k);

enum class Mechanism { kAuxiliary, kConstrained };
// Which losses may update the behavior encoder.
enum class Routing { kOnlyRl, kOnlyPrcl, kBoth };

struct AgentConfig {
  std::size_t hidden = 128;
  double gamma = 0.9;
  double tau = 0.001;
  double learning_rate = 1e-3;
  Mechanism mechanism = Mechanism::kAuxiliary;
  double gamma_prcl = 0.0;  // Constrained only
  Routing routing = Routing::kBoth;
  prcl::CoefficientStrategy coefficient;
};

struct CriticResult {
  std::vector<double> td_abs;
  double loss = 0.0;
  double grad_norm_rl = 0.0;  // logged encoder layer, RL pass
  std::size_t prcl_samples = 0;
  Tensor states;              // online states of the batch, pre-update
};

struct ActorResult {
  double objective = 0.0;  // mean Q(s, pi(s))
};

// DDPG agent over the state representation network. Parameter groups:
// actor; critic plus user encoder and activation unit; behavior encoder.
// The behavior encoder has one optimizer per gradient source so routing can
// decide which of them steps.
class Agent {
 public:
  Agent(const staterep::RepresentationConfig& rep_config, const AgentConfig& config, numcore::Rng& rng);
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const AgentConfig& config() const { return config_; }
  std::size_t action_dim() const { return net_.repr_dim(); }
  staterep::RepresentationNetwork& representation() { return net_; }
  Mlp& actor() { return actor_; }
  Mlp& critic() { return critic_; }
  Mlp& actor_target() { return actor_target_; }
  Mlp& critic_target() { return critic_target_; }

  // Deterministic policy output for one state (evaluation statistics).
  std::vector<double> policy(const staterep::StateInput& input);
  // pi(s) plus N(0, sigma^2) noise per coordinate, clipped to [-1, 1].
  std::vector<double> select_action(const staterep::StateInput& input, double sigma, Rng& rng);

  // Bootstrapped targets from the target networks; constants for the update.
  std::vector<double> compute_targets(std::span<const replay::Transition* const> batch);

  // mean(w * delta^2 / 2) over the batch, plus gamma_prcl times the
  // contrastive loss of prcl_batch under the Constrained mechanism when
  // prcl_batch is nonempty. encoder_from_rl / encoder_from_prcl bind the
  // behavior encoder as trainable for the respective term.
  struct CriticLoss {
    Var loss;
    Var q;
    Var states;
    std::size_t prcl_samples = 0;
  };
  CriticLoss critic_loss(Tape& tape, std::span<const replay::Transition* const> batch,
                         std::span<const double> targets, std::span<const double> weights,
                         std::span<const staterep::StateInput> prcl_batch, Rng& prcl_rng, bool encoder_from_rl,
                         bool encoder_from_prcl);

  CriticResult critic_update(std::span<const replay::Transition* const> batch, std::span<const double> weights,
                             std::span<const staterep::StateInput> prcl_batch, Rng& prcl_rng);

  // -mean Q(s, pi(s)) with states held constant; gradients reach the actor only.
  Var actor_loss(Tape& tape, const Tensor& states);
  ActorResult actor_update(const Tensor& states);

  // Separate contrastive step (Auxiliary mechanism); applied per routing.
  prcl::PrclStepResult prcl_step(std::span<const staterep::StateInput> batch, Rng& rng);

  void soft_update_targets();

  bool rl_updates_encoder() const { return config_.routing != Routing::kOnlyPrcl; }
  bool prcl_updates_encoder() const { return config_.routing != Routing::kOnlyRl; }

 private:
  AgentConfig config_;
  staterep::RepresentationNetwork net_;
  Mlp actor_, critic_, actor_target_, critic_target_;
  numcore::Adam actor_opt_, critic_opt_, rl_encoder_opt_, prcl_encoder_opt_;
};

// Inputs of the current and next state of each transition.
std::vector<staterep::StateInput> current_inputs(std::span<const replay::Transition* const> batch);
std::vector<staterep::StateInput> next_inputs(std::span<const replay::Transition* const> batch);

}  // namespace crir::agent
