#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "crir/numcore/adam.hpp"
#include "crir/staterep/representation.hpp"

// Preference ranking contrastive learning: behaviors of one history are
// ranked by interest weight, the top behavior serves as anchor, one of the
// upper half as positive and the lower half as negatives.
namespace crir::prcl {

using numcore::Tape;
using numcore::Var;
using Rng = std::mt19937_64;

struct RankedHistory {
  std::vector<std::size_t> order;  // behavior indices, highest weight first
  std::vector<std::size_t> ranks;  // 1-based rank of each behavior
};

// Descending by weight; ties go to the later step index.
RankedHistory rank_behaviors(std::span<const double> weights, std::span<const std::uint32_t> step_indices);

// Indices refer to rows of the behavior matrix the sample was built from.
struct ContrastiveSample {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t positive_rank = 0;
  std::vector<std::size_t> negatives;
};

// Empty result means the history is too short to form a sample (n < 4).
std::optional<ContrastiveSample> build_contrastive_sample(const RankedHistory& ranked, Rng& rng);

// Mean of 1/sqrt(i) over i = 2..floor(T/2).
double balanced_coefficient(std::size_t max_history);

struct CoefficientStrategy {
  enum class Kind { kPositional, kBalanced };
  Kind kind = Kind::kPositional;
  double balanced_value = 0.0;

  static CoefficientStrategy positional() { return {}; }
  static CoefficientStrategy balanced(std::size_t max_history = 50) {
    return {Kind::kBalanced, balanced_coefficient(max_history)};
  }
  double coefficient(std::size_t rank) const;
};

// Mean over samples of -c * log(exp(h_k . h*) / sum_neg exp(h_n . h*)),
// the denominator running over negatives only. behaviors is R x D.
Var positional_infonce(Var behaviors, std::span<const ContrastiveSample> samples, const CoefficientStrategy& strategy);

enum class SamplingMechanism { kMixed, kDivided, kCombined };

// Mixed: both batches; Combined: the RL batch only; Divided: the random batch only.
std::vector<std::size_t> assemble_prcl_batch(const std::vector<std::size_t>& per_batch,
                                             const std::vector<std::size_t>& random_batch,
                                             SamplingMechanism mechanism);

struct PrclLoss {
  Var loss;  // invalid when every history was skipped
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

// Records the contrastive loss of a batch of histories on tape. Interest
// weights are read without gradient; behavior representations carry it into
// the behavior encoder when train_encoder is set.
PrclLoss prcl_loss(Tape& tape, staterep::RepresentationNetwork& net, std::span<const staterep::StateInput> batch,
                   const CoefficientStrategy& strategy, Rng& rng, bool train_encoder = true);

struct PrclStepResult {
  double mean_loss = 0.0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
  double grad_norm = 0.0;  // logged encoder layer, before the step
  bool applied = false;
};

// One contrastive step. Gradients land in the behavior encoder; the
// optimizer, when given, applies them. Without one they are discarded.
PrclStepResult prcl_update(staterep::RepresentationNetwork& net, std::span<const staterep::StateInput> batch,
                           const CoefficientStrategy& strategy, Rng& rng, numcore::Adam* optimizer);

}  // namespace crir::prcl
