#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "crir/numcore/tensor.hpp"

namespace crir::numcore {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

// View handed to a node's gradient rule during the reverse sweep.
class BackwardContext {
 public:
  std::span<const double> out_grad() const { return out_grad_; }
  const Tensor& out_value() const;
  const Tensor& in_value(std::size_t k) const;
  bool in_needs_grad(std::size_t k) const;
  // Gradient buffer of input k; rules accumulate into it.
  std::span<double> in_grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t node, std::span<const double> out_grad)
      : tape_(tape), node_(node), out_grad_(out_grad) {}

  Tape& tape_;
  std::size_t node_;
  std::span<const double> out_grad_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Append-only record of operations for reverse-mode differentiation.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a persistent tensor. Gradients reach it only when the
  // tensor has requires_grad set; the tensor must outlive the tape.
  Var param(Tensor& tensor);
  // Reads the tensor without ever producing a gradient for it.
  Var frozen(const Tensor& tensor);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn rule);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar root. Gradients are accumulated into the
  // grad slot of every reachable parameter leaf.
  void backward(Var root);
  // Gradient of the root w.r.t. an intermediate node after backward();
  // empty when the node was not reached.
  std::span<const double> grad(Var v) const;

 private:
  friend class BackwardContext;

  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn rule;
    bool needs_grad = false;

    const Tensor& value() const { return external ? *external : owned; }
  };

  void check_owned(Var v) const;
  std::span<double> grad_buffer(std::size_t node);

  std::deque<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

}  // namespace crir::numcore
