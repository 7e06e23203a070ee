#include "crir/numcore/tape.hpp"

#include <algorithm>
#include <stdexcept>

namespace crir::numcore {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value(*this);
}

const Tensor& BackwardContext::out_value() const { return tape_.nodes_[node_].value(); }

const Tensor& BackwardContext::in_value(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].value();
}

bool BackwardContext::in_needs_grad(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(k)].needs_grad;
}

std::span<double> BackwardContext::in_grad(std::size_t k) {
  return tape_.grad_buffer(tape_.nodes_[node_].inputs.at(k));
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.owned.set_requires_grad(false);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor& tensor) {
  Node node;
  node.external = &tensor;
  node.param = tensor.requires_grad() ? &tensor : nullptr;
  node.needs_grad = tensor.requires_grad();
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::frozen(const Tensor& tensor) {
  Node node;
  node.external = &tensor;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn rule) {
  Node node;
  node.owned = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    check_owned(in);
    node.inputs.push_back(in.index());
    node.needs_grad = node.needs_grad || nodes_[in.index()].needs_grad;
  }
  if (node.needs_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.index()].value();
}

bool Tape::needs_grad(Var v) const {
  check_owned(v);
  return nodes_[v.index()].needs_grad;
}

void Tape::check_owned(Var v) const {
  if (v.tape_ != this || v.index_ >= nodes_.size()) {
    throw std::invalid_argument("Var does not belong to this tape");
  }
}

std::span<double> Tape::grad_buffer(std::size_t node) {
  auto& g = grads_[node];
  if (g.empty()) g.assign(nodes_[node].value().size(), 0.0);
  return g;
}

void Tape::backward(Var root) {
  check_owned(root);
  if (!nodes_[root.index()].value().is_scalar()) {
    throw std::invalid_argument("backward() requires a scalar root, got " +
                                shape_string(nodes_[root.index()].value().shape()));
  }
  grads_.assign(nodes_.size(), {});
  if (!nodes_[root.index()].needs_grad) return;
  grads_[root.index()] = {1.0};

  for (std::size_t i = root.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (grads_[i].empty() || !node.needs_grad) continue;
    for (auto in : node.inputs) {
      if (in >= i) throw std::logic_error("tape is not topologically ordered (cycle)");
    }
    if (node.rule) {
      BackwardContext ctx(*this, i, grads_[i]);
      node.rule(ctx);
    }
    if (node.param) {
      auto dst = node.param->grad();
      const auto& src = grads_[i];
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

std::span<const double> Tape::grad(Var v) const {
  check_owned(v);
  if (v.index() >= grads_.size()) return {};
  return grads_[v.index()];
}

}  // namespace crir::numcore
