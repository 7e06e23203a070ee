#include "crir/numcore/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace crir::numcore {

std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : shape_(std::move(shape)), values_(shape_size(shape_), 0.0) {
  set_requires_grad(requires_grad);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_size(shape_) != values_.size()) {
    throw std::invalid_argument("value count " + std::to_string(values_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
  set_requires_grad(requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

double Tensor::item() const {
  if (!is_scalar()) throw std::invalid_argument("item() on non-scalar tensor " + shape_string(shape_));
  return values_[0];
}

void Tensor::set_requires_grad(bool on) {
  requires_grad_ = on;
  if (on) {
    grad_.assign(values_.size(), 0.0);
  } else {
    grad_.clear();
    grad_.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() {
  if (!requires_grad_) throw std::logic_error("tensor has no gradient slot");
  return grad_;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad_) throw std::logic_error("tensor has no gradient slot");
  return grad_;
}

void Tensor::zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace crir::numcore
