#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace crir::harness {

// Hand-traced rows of the ML-1M reward routine.
struct GoldenReward {
  std::optional<int> rating;  // empty: pair absent from the dataset
  std::size_t repeats = 0;
  double reward = 0.0;
};
const std::vector<GoldenReward>& golden_reward_table();

struct GradientOracleResult {
  std::string loss;
  std::size_t points = 0;
  double max_error = 0.0;  // max relative error over all points and parameters
};

// Finite-difference check of every training loss (contrastive, critic,
// Constrained combined, actor) at `points` random parameter/batch draws on
// small networks. Alternates discrete and continuous representations.
std::vector<GradientOracleResult> run_gradient_oracle(std::size_t points = 100, std::uint64_t seed = 0);

}  // namespace crir::harness
