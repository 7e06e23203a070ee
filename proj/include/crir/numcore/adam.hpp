#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crir/numcore/tensor.hpp"

namespace crir::numcore {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  AdamHyper hyper;
};

AdamState make_adam_state(std::span<Tensor* const> params, AdamHyper hyper = {});

// Bias-corrected Adam update; gradients are zeroed afterwards. Throws if a
// parameter has no gradient slot or shapes drifted from the state.
void adam_step(std::span<Tensor* const> params, AdamState& state);

// L2 norm of a parameter's gradient; throws if it has no gradient slot.
double gradient_norm(const Tensor& param);

// Parameter list bundled with its optimizer state.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor*> params, AdamHyper hyper = {});

  void step() { adam_step(params_, state_); }
  void zero_grad();
  const AdamState& state() const { return state_; }
  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  AdamState state_;
};

}  // namespace crir::numcore
