#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace crir::numcore {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient slot.
// Scalars use shape {1}; every dimension is strictly positive.
class Tensor {
 public:
  Tensor() : Tensor(Shape{1}) {}
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Leading dimension for rank-2 tensors, 1 otherwise.
  std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : size(); }
  bool is_scalar() const { return values_.size() == 1; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on);
  // Throws if the tensor does not carry a gradient slot.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::vector<double> grad_;
};

}  // namespace crir::numcore
