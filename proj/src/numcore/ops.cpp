#include "crir/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace crir::numcore {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return ConstMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> data, std::size_t rows, std::size_t cols) {
  return MutMap(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

void same_shape(Var a, Var b, const char* op) {
  same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

void require_matrix(Var a, const char* op) {
  if (a.value().rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a rank-2 tensor, got " +
                                shape_string(a.shape()));
  }
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(std::move(out), {a}, [dfdx](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    auto gx = ctx.in_grad(0);
    const Tensor& x = ctx.in_value(0);
    const Tensor& y = ctx.out_value();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.in_needs_grad(k)) continue;
      auto gi = ctx.in_grad(k);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    if (ctx.in_needs_grad(0)) {
      auto ga = ctx.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.in_needs_grad(1)) {
      auto gb = ctx.in_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tensor out(a.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    const Tensor& x = ctx.in_value(0);
    const Tensor& y = ctx.in_value(1);
    if (ctx.in_needs_grad(0)) {
      auto ga = ctx.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    }
    if (ctx.in_needs_grad(1)) {
      auto gb = ctx.in_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var add_row(Var x, Var b) {
  same_tape(x, b);
  require_matrix(x, "add_row");
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (bv.size() != xv.cols()) {
    throw std::invalid_argument("add_row: bias " + shape_string(bv.shape()) + " vs input " +
                                shape_string(xv.shape()));
  }
  Tensor out = xv;
  out.set_requires_grad(false);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return x.tape().record(std::move(out), {x, b}, [rows, cols](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    if (ctx.in_needs_grad(0)) {
      auto gx = ctx.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (ctx.in_needs_grad(1)) {
      auto gb = ctx.in_grad(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
    }
  });
}

Var scale_rows(Var x, Var w) {
  same_tape(x, w);
  require_matrix(x, "scale_rows");
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (wv.size() != rows) {
    throw std::invalid_argument("scale_rows: weights " + shape_string(wv.shape()) + " vs rows of " +
                                shape_string(xv.shape()));
  }
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] * wv[r];
  return x.tape().record(std::move(out), {x, w}, [rows, cols](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    const Tensor& xv = ctx.in_value(0);
    const Tensor& wv = ctx.in_value(1);
    if (ctx.in_needs_grad(0)) {
      auto gx = ctx.in_grad(0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] * wv[r];
    }
    if (ctx.in_needs_grad(1)) {
      auto gw = ctx.in_grad(1);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += g[r * cols + c] * xv[r * cols + c];
        gw[r] += acc;
      }
    }
  });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw std::invalid_argument("log: non-positive input");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var linear(Var x, Var weight) {
  same_tape(x, weight);
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const std::size_t rows = xv.rows(), in = xv.cols(), outc = wv.rows();
  if (wv.cols() != in) {
    throw std::invalid_argument("linear: input " + shape_string(xv.shape()) + " vs weight " +
                                shape_string(wv.shape()));
  }
  Tensor out({rows, outc});
  as_matrix(out.values(), rows, outc).noalias() =
      as_matrix(xv.values(), rows, in) * as_matrix(wv.values(), outc, in).transpose();
  return x.tape().record(std::move(out), {x, weight}, [rows, in, outc](BackwardContext& ctx) {
    auto g = as_matrix(ctx.out_grad(), rows, outc);
    if (ctx.in_needs_grad(0)) {
      as_matrix(ctx.in_grad(0), rows, in).noalias() +=
          g * as_matrix(ctx.in_value(1).values(), outc, in);
    }
    if (ctx.in_needs_grad(1)) {
      as_matrix(ctx.in_grad(1), outc, in).noalias() +=
          g.transpose() * as_matrix(ctx.in_value(0).values(), rows, in);
    }
  });
}

Var linear(Var x, Var weight, Var bias) { return add_row(linear(x, weight), bias); }

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t rows = a.value().rows(), inner = a.value().cols(), cols = b.value().cols();
  if (b.value().rows() != inner) {
    throw std::invalid_argument("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({rows, cols});
  as_matrix(out.values(), rows, cols).noalias() =
      as_matrix(a.value().values(), rows, inner) * as_matrix(b.value().values(), inner, cols);
  return a.tape().record(std::move(out), {a, b}, [rows, inner, cols](BackwardContext& ctx) {
    auto g = as_matrix(ctx.out_grad(), rows, cols);
    if (ctx.in_needs_grad(0)) {
      as_matrix(ctx.in_grad(0), rows, inner).noalias() +=
          g * as_matrix(ctx.in_value(1).values(), inner, cols).transpose();
    }
    if (ctx.in_needs_grad(1)) {
      as_matrix(ctx.in_grad(1), inner, cols).noalias() +=
          as_matrix(ctx.in_value(0).values(), rows, inner).transpose() * g;
    }
  });
}

Var gather_rows(Var table, std::vector<std::size_t> indices) {
  require_matrix(table, "gather_rows");
  const Tensor& tv = table.value();
  const std::size_t n = tv.rows(), cols = tv.cols();
  if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
  for (auto i : indices) {
    if (i >= n) {
      throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range " +
                                  std::to_string(n));
    }
  }
  Tensor out({indices.size(), cols});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(tv.values().begin() + static_cast<std::ptrdiff_t>(indices[r] * cols), cols,
                out.values().begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  return table.tape().record(std::move(out), {table},
                             [idx = std::move(indices), cols](BackwardContext& ctx) {
                               auto g = ctx.out_grad();
                               auto gt = ctx.in_grad(0);
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 const std::size_t dst = idx[r] * cols, src = r * cols;
                                 for (std::size_t c = 0; c < cols; ++c) gt[dst + c] += g[src + c];
                               }
                             });
}

namespace {

Var segment_reduce(Var x, std::vector<std::size_t> offsets, bool average) {
  require_matrix(x, "segment_sum");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw std::invalid_argument("segment_sum: offsets must run monotonically from 0 to row count");
  }
  const std::size_t segments = offsets.size() - 1;
  Tensor out({segments, cols});
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t len = offsets[s + 1] - offsets[s];
    if (len == 0) continue;
    const double f = average ? 1.0 / static_cast<double>(len) : 1.0;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] += xv[r * cols + c];
    if (average)
      for (std::size_t c = 0; c < cols; ++c) out[s * cols + c] *= f;
  }
  return x.tape().record(std::move(out), {x},
                         [off = std::move(offsets), cols, average](BackwardContext& ctx) {
                           auto g = ctx.out_grad();
                           auto gx = ctx.in_grad(0);
                           for (std::size_t s = 0; s + 1 < off.size(); ++s) {
                             const std::size_t len = off[s + 1] - off[s];
                             if (len == 0) continue;
                             const double f = average ? 1.0 / static_cast<double>(len) : 1.0;
                             for (std::size_t r = off[s]; r < off[s + 1]; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                 gx[r * cols + c] += f * g[s * cols + c];
                           }
                         });
}

}  // namespace

Var segment_sum(Var x, std::vector<std::size_t> offsets) {
  return segment_reduce(x, std::move(offsets), false);
}

Var segment_mean(Var x, std::vector<std::size_t> offsets) {
  return segment_reduce(x, std::move(offsets), true);
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require_matrix(p, "concat_cols");
    if (p.value().rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({rows, total});
  std::size_t col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + col0 + c] = v[r * widths[k] + c];
    col0 += widths[k];
  }
  return parts.front().tape().record(
      std::move(out), parts, [widths, rows, total](BackwardContext& ctx) {
        auto g = ctx.out_grad();
        std::size_t col0 = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (ctx.in_needs_grad(k)) {
            auto gk = ctx.in_grad(k);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + col0 + c];
          }
          col0 += widths[k];
        }
      });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (begin >= end || end > cols) throw std::invalid_argument("slice_cols: bad column range");
  const std::size_t width = end - begin;
  Tensor out({rows, width});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out[r * width + c] = xv[r * cols + begin + c];
  return x.tape().record(std::move(out), {x}, [rows, cols, begin, width](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    auto gx = ctx.in_grad(0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < width; ++c) gx[r * cols + begin + c] += g[r * width + c];
  });
}

Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.value().values().begin(), x.value().values().end()));
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    auto gx = ctx.in_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var row_dot(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = av.rows(), cols = av.cols();
  if (bv.size() != cols) {
    throw std::invalid_argument("row_dot: " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  }
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += av[r * cols + c] * bv[c];
    out[r] = acc;
  }
  return a.tape().record(std::move(out), {a, b}, [rows, cols](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    const Tensor& av = ctx.in_value(0);
    const Tensor& bv = ctx.in_value(1);
    if (ctx.in_needs_grad(0)) {
      auto ga = ctx.in_grad(0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[r] * bv[c];
    }
    if (ctx.in_needs_grad(1)) {
      auto gb = ctx.in_grad(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r] * av[r * cols + c];
    }
  });
}

Var rowwise_dot(Var a, Var b) {
  same_shape(a, b, "rowwise_dot");
  require_matrix(a, "rowwise_dot");
  const std::size_t rows = a.value().rows(), cols = a.value().cols();
  Tensor out({rows});
  as_matrix(out.values(), rows, 1) =
      (as_matrix(a.value().values(), rows, cols).cwiseProduct(as_matrix(b.value().values(), rows, cols)))
          .rowwise()
          .sum();
  return a.tape().record(std::move(out), {a, b}, [rows, cols](BackwardContext& ctx) {
    auto g = as_matrix(ctx.out_grad(), rows, 1);
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.in_needs_grad(k)) continue;
      auto other = as_matrix(ctx.in_value(1 - k).values(), rows, cols);
      as_matrix(ctx.in_grad(k), rows, cols).array() += other.array().colwise() * g.col(0).array();
    }
  });
}

Var dot(Var a, Var b) {
  if (a.value().size() != b.value().size()) {
    throw std::invalid_argument("dot: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  return row_dot(reshape(a, {1, a.value().size()}), b);
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return a.tape().record(Tensor::scalar(acc), {a}, [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    for (double& gi : ctx.in_grad(0)) gi += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var logsumexp(Var a) {
  const auto x = a.value().values();
  const double m = *std::max_element(x.begin(), x.end());
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return a.tape().record(Tensor::scalar(m + std::log(acc)), {a}, [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    const double lse = ctx.out_value()[0];
    const auto x = ctx.in_value(0).values();
    auto gx = ctx.in_grad(0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g * std::exp(x[i] - lse);
  });
}

Var segment_logsumexp(Var a, std::vector<std::size_t> offsets) {
  const auto x = a.value().values();
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != x.size()) {
    throw std::invalid_argument("segment_logsumexp: offsets must run from 0 to element count");
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) throw std::invalid_argument("segment_logsumexp: empty or unordered segment");
  }
  const std::size_t segments = offsets.size() - 1;
  Tensor out({segments});
  for (std::size_t s = 0; s < segments; ++s) {
    const double m = *std::max_element(x.begin() + offsets[s], x.begin() + offsets[s + 1]);
    double acc = 0.0;
    for (std::size_t i = offsets[s]; i < offsets[s + 1]; ++i) acc += std::exp(x[i] - m);
    out[s] = m + std::log(acc);
  }
  return a.tape().record(std::move(out), {a}, [off = std::move(offsets)](BackwardContext& ctx) {
    auto g = ctx.out_grad();
    const auto lse = ctx.out_value().values();
    const auto x = ctx.in_value(0).values();
    auto gx = ctx.in_grad(0);
    for (std::size_t s = 0; s + 1 < off.size(); ++s)
      for (std::size_t i = off[s]; i < off[s + 1]; ++i) gx[i] += g[s] * std::exp(x[i] - lse[s]);
  });
}

}  // namespace crir::numcore
