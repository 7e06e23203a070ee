#include "crir/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace crir::numcore {
namespace {

double evaluate(const ParamScalarFn& f) {
  Tape tape;
  const double v = f(tape).value().item();
  if (!std::isfinite(v)) throw std::domain_error("finite_diff_check: non-finite function value");
  return v;
}

double compare(std::span<const double> autodiff, Tensor& param, const ParamScalarFn& f, double h) {
  double worst = 0.0;
  auto values = param.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = evaluate(f);
    values[i] = saved - h;
    const double down = evaluate(f);
    values[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(autodiff[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace

double finite_diff_check(const ParamScalarFn& f, Tensor& param, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  const bool had_grad = param.requires_grad();
  param.set_requires_grad(true);
  std::vector<double> autodiff;
  {
    Tape tape;
    Var root = f(tape);
    if (!std::isfinite(root.value().item())) {
      throw std::domain_error("finite_diff_check: non-finite function value");
    }
    tape.backward(root);
    autodiff.assign(param.grad().begin(), param.grad().end());
  }
  param.set_requires_grad(false);
  const double worst = compare(autodiff, param, f, h);
  param.set_requires_grad(had_grad);
  return worst;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor copy(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  return finite_diff_check([&](Tape& tape) { return f(tape, tape.param(copy)); }, copy, h);
}

}  // namespace crir::numcore
