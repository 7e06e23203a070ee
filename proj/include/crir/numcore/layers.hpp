#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "crir/numcore/ops.hpp"

namespace crir::numcore {

using Rng = std::mt19937_64;

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng);

inline Var bind(Tape& tape, Tensor& t, bool trainable) {
  return trainable ? tape.param(t) : tape.frozen(t);
}

struct Linear {
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }

  Var forward(Tape& tape, Var x, bool trainable = true);
  std::vector<Tensor*> parameters() { return {&weight, &bias}; }

  Tensor weight;  // out x in
  Tensor bias;    // out
};

enum class DiceMode { kTrain, kEval };

// Data-dependent PReLU: out = p(x) x + (1 - p(x)) alpha x with
// p(x) = sigmoid((x - mean) / sqrt(var + eps)), statistics per channel.
struct Dice {
  Dice() = default;
  explicit Dice(std::size_t channels, double alpha_init = 0.25);

  std::size_t channels() const { return alpha.size(); }
  std::vector<Tensor*> parameters() { return {&alpha}; }
  // Folds the statistics of the last train-mode batch into the running
  // averages. Forward passes never touch the running averages themselves.
  void commit_statistics();

  Tensor alpha;
  Tensor running_mean;
  Tensor running_var;
  std::vector<double> pending_mean;
  std::vector<double> pending_var;
  double momentum = 0.99;
  double epsilon = 1e-8;
};

// Dice with explicitly supplied per-channel statistics, treated as constants.
Var dice(Var x, Var alpha, std::span<const double> mean, std::span<const double> var,
         double epsilon = 1e-8);

// Train mode on more than one row normalises with the statistics of x itself
// (gradients flow through them) and stages them for commit_statistics().
// Eval mode, or a single row, uses the running averages.
Var dice(Var x, Dice& unit, DiceMode mode, bool trainable = true);

}  // namespace crir::numcore
