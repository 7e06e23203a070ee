#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crir/numcore/layers.hpp"
#include "crir/staterep/behavior.hpp"

namespace crir::staterep {

using numcore::DiceMode;
using numcore::Tape;
using numcore::Tensor;
using numcore::Var;

struct RepresentationConfig {
  EnvKind kind = EnvKind::kDiscrete;
  std::size_t catalog_size = 0;        // discrete
  std::size_t num_users = 0;           // discrete
  std::size_t item_feature_width = 0;  // continuous
  std::size_t user_feature_width = 0;  // continuous
  std::size_t repr_dim = 100;
  std::size_t feedback_buckets = 5;
  std::size_t activation_hidden = 36;
  std::size_t max_history = 50;
  RewardRange reward_range;
};

// Equal-width bucket of a feedback value over the reward range.
std::size_t feedback_bucket(double feedback, RewardRange range, std::size_t buckets);

struct StateInput {
  UserProfile user;
  std::span<const BehaviorRecord> history;
};

struct ForwardOptions {
  DiceMode mode = DiceMode::kEval;
  bool train_encoder = false;  // behavior encoder: item/feedback tables, projection
  bool train_state = false;    // user encoder and activation unit
  bool need_state = true;
  // When false the activation unit reads detached behavior values, so the
  // interest weights carry no gradient (used for ranking only).
  bool weights_need_grad = true;
};

// Batched forward result. Rows are behaviors of all states, concatenated;
// rows of state s are [offsets[s], offsets[s+1]).
struct RepresentationBatch {
  Var states;     // S x 2D, valid when need_state
  Var behaviors;  // R x D, valid when R > 0
  Var weights;    // R, valid when R > 0
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> step_indices;

  std::size_t num_rows() const { return offsets.empty() ? 0 : offsets.back(); }
  std::size_t rows_of(std::size_t s) const { return offsets[s + 1] - offsets[s]; }
};

struct StateRepresentation {
  Var state;                    // 1 x 2D
  std::vector<double> weights;  // one per (truncated) behavior
};

// State representation network: behavior encoder, user encoder and the
// activation unit producing interest weights. The state concatenates the
// mean of u * h over the history with the interest-weighted sum of h.
class RepresentationNetwork {
 public:
  RepresentationNetwork(const RepresentationConfig& config, numcore::Rng& rng);

  const RepresentationConfig& config() const { return config_; }
  std::size_t repr_dim() const { return config_.repr_dim; }
  std::size_t state_dim() const { return 2 * config_.repr_dim; }

  RepresentationBatch forward(Tape& tape, std::span<const StateInput> batch, const ForwardOptions& options);

  // Single-record helpers; evaluation-mode statistics.
  Var encode_behavior(Tape& tape, const BehaviorRecord& record, bool trainable = false);
  Var encode_user(Tape& tape, const UserProfile& user, bool trainable = false);
  // Interest weight of behavior h for user u (both 1 x D), from the
  // concatenation [u, u * h, h].
  Var activation_unit(Tape& tape, Var user, Var behavior, bool trainable = false);
  StateRepresentation state_representation(Tape& tape, const StateInput& input);

  std::vector<Tensor*> encoder_parameters();
  std::vector<Tensor*> state_parameters();
  std::vector<Tensor*> parameters();
  void commit_statistics() { act_dice_.commit_statistics(); }

  // Item embedding table E(id) of a discrete catalog; actions are resolved
  // against it. Throws for continuous environments.
  const Tensor& item_embeddings() const;
  // Linear layer of the behavior encoder whose gradient norm is logged.
  Tensor& logged_encoder_layer() { return projection_.weight; }

  numcore::Linear& projection() { return projection_; }
  numcore::Linear& activation_hidden() { return act_hidden_; }
  numcore::Linear& activation_output() { return act_out_; }
  numcore::Dice& activation_dice() { return act_dice_; }

 private:
  std::vector<std::span<const BehaviorRecord>> truncate(std::span<const StateInput> batch) const;

  RepresentationConfig config_;
  Tensor item_table_;   // discrete: catalog x D
  Tensor user_table_;   // discrete: users x D
  numcore::Linear item_encoder_;  // continuous: F_I -> D
  numcore::Linear user_encoder_;  // continuous: F_U -> D
  Tensor feedback_table_;         // buckets x D
  numcore::Linear projection_;    // [item | feedback] (2D) -> D
  numcore::Linear act_hidden_;    // [u | u*h | h] (3D) -> hidden
  numcore::Dice act_dice_;
  numcore::Linear act_out_;       // hidden -> 1
};

}  // namespace crir::staterep
