#include "crir/numcore/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace crir::numcore {

AdamState make_adam_state(std::span<Tensor* const> params, AdamHyper hyper) {
  AdamState state;
  state.hyper = hyper;
  for (const Tensor* p : params) {
    state.first_moment.emplace_back(p->size(), 0.0);
    state.second_moment.emplace_back(p->size(), 0.0);
  }
  return state;
}

void adam_step(std::span<Tensor* const> params, AdamState& state) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter count does not match optimizer state");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->requires_grad()) throw std::invalid_argument("adam_step: parameter without gradient");
    if (params[k]->size() != state.first_moment[k].size()) {
      throw std::invalid_argument("adam_step: parameter shape changed");
    }
  }
  const auto& h = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->values();
    auto grad = params[k]->grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
      values[i] -= h.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + h.epsilon);
    }
    params[k]->zero_grad();
  }
}

Adam::Adam(std::vector<Tensor*> params, AdamHyper hyper)
    : params_(std::move(params)), state_(make_adam_state(params_, hyper)) {}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

double gradient_norm(const Tensor& param) {
  double acc = 0.0;
  for (double g : param.grad()) acc += g * g;
  return std::sqrt(acc);
}

}  // namespace crir::numcore
