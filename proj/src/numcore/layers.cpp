#include "crir/numcore/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace crir::numcore {

void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight({out, in}, true), bias({out}, true) {
  init_uniform_fan_in(weight, in, rng);
  init_uniform_fan_in(bias, in, rng);
}

Var Linear::forward(Tape& tape, Var x, bool trainable) {
  return linear(x, bind(tape, weight, trainable), bind(tape, bias, trainable));
}

Dice::Dice(std::size_t channels, double alpha_init)
    : alpha({channels}, true), running_mean({channels}), running_var({channels}) {
  alpha.fill(alpha_init);
  running_var.fill(1.0);
}

void Dice::commit_statistics() {
  if (pending_mean.empty()) return;
  for (std::size_t c = 0; c < channels(); ++c) {
    running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * pending_mean[c];
    running_var[c] = momentum * running_var[c] + (1.0 - momentum) * pending_var[c];
  }
  pending_mean.clear();
  pending_var.clear();
}

namespace {

void check_dice_inputs(Var x, Var alpha) {
  if (x.value().rank() != 2) throw std::invalid_argument("dice: expected rank-2 input");
  if (alpha.value().size() != x.value().cols()) {
    throw std::invalid_argument("dice: alpha has " + std::to_string(alpha.value().size()) +
                                " channels, input has " + std::to_string(x.value().cols()));
  }
}

}  // namespace

Var dice(Var x, Var alpha, std::span<const double> mean, std::span<const double> var, double epsilon) {
  check_dice_inputs(x, alpha);
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  if (mean.size() != cols || var.size() != cols) throw std::invalid_argument("dice: statistics width mismatch");

  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon);
  std::vector<double> mu(mean.begin(), mean.end());

  const Tensor& xv = x.value();
  const Tensor& av = alpha.value();
  Tensor out(xv.shape());
  std::vector<double> p(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      p[i] = 1.0 / (1.0 + std::exp(-(xv[i] - mu[c]) * inv_std[c]));
      out[i] = xv[i] * (av[c] + (1.0 - av[c]) * p[i]);
    }
  }
  return x.tape().record(
      std::move(out), {x, alpha},
      [p = std::move(p), inv_std = std::move(inv_std), rows, cols](BackwardContext& ctx) {
        auto g = ctx.out_grad();
        const Tensor& xv = ctx.in_value(0);
        const Tensor& av = ctx.in_value(1);
        if (ctx.in_needs_grad(0)) {
          auto gx = ctx.in_grad(0);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              const double dp = p[i] * (1.0 - p[i]) * inv_std[c];
              gx[i] += g[i] * (av[c] + (1.0 - av[c]) * (p[i] + xv[i] * dp));
            }
          }
        }
        if (ctx.in_needs_grad(1)) {
          auto ga = ctx.in_grad(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              ga[c] += g[i] * xv[i] * (1.0 - p[i]);
            }
        }
      });
}

Var dice(Var x, Dice& unit, DiceMode mode, bool trainable) {
  Var alpha = bind(x.tape(), unit.alpha, trainable);
  check_dice_inputs(x, alpha);
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  if (mode == DiceMode::kEval || rows < 2) {
    return dice(x, alpha, unit.running_mean.values(), unit.running_var.values(), unit.epsilon);
  }

  const Tensor& xv = x.value();
  std::vector<double> mean(cols, 0.0), var(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mean[c] += xv[r * cols + c];
  for (double& m : mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv[r * cols + c] - mean[c];
      var[c] += d * d;
    }
  for (double& v : var) v /= static_cast<double>(rows);

  unit.pending_mean = mean;
  unit.pending_var = var;

  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + unit.epsilon);
  const Tensor& av = alpha.value();
  Tensor out(xv.shape());
  std::vector<double> z(xv.size()), p(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      z[i] = (xv[i] - mean[c]) * inv_std[c];
      p[i] = 1.0 / (1.0 + std::exp(-z[i]));
      out[i] = xv[i] * (av[c] + (1.0 - av[c]) * p[i]);
    }

  return x.tape().record(
      std::move(out), {x, alpha},
      [z = std::move(z), p = std::move(p), inv_std = std::move(inv_std), rows, cols](BackwardContext& ctx) {
        auto g = ctx.out_grad();
        const Tensor& xv = ctx.in_value(0);
        const Tensor& av = ctx.in_value(1);
        if (ctx.in_needs_grad(0)) {
          auto gx = ctx.in_grad(0);
          // dz for the normalised input, then the batch-norm style backward.
          std::vector<double> dz(rows * cols);
          std::vector<double> dz_mean(cols, 0.0), dzz_mean(cols, 0.0);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              gx[i] += g[i] * (av[c] + (1.0 - av[c]) * p[i]);
              dz[i] = g[i] * (1.0 - av[c]) * xv[i] * p[i] * (1.0 - p[i]);
              dz_mean[c] += dz[i];
              dzz_mean[c] += dz[i] * z[i];
            }
          const double n = static_cast<double>(rows);
          for (std::size_t c = 0; c < cols; ++c) {
            dz_mean[c] /= n;
            dzz_mean[c] /= n;
          }
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              gx[i] += inv_std[c] * (dz[i] - dz_mean[c] - z[i] * dzz_mean[c]);
            }
        }
        if (ctx.in_needs_grad(1)) {
          auto ga = ctx.in_grad(1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              ga[c] += g[i] * xv[i] * (1.0 - p[i]);
            }
        }
      });
}

}  // namespace crir::numcore
