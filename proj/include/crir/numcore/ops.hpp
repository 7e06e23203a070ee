#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crir/numcore/tape.hpp"

// Differentiable operations over Var. Every op validates shapes before doing
// numeric work and throws std::invalid_argument on mismatch.
namespace crir::numcore {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// X (R x C) + b (C), b broadcast over rows.
Var add_row(Var x, Var b);
// Row r of X (R x C) multiplied by w[r]; w has R elements.
Var scale_rows(Var x, Var w);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);

// X (R x K) times W^T where W is (C x K), plus optional bias (C).
Var linear(Var x, Var weight);
Var linear(Var x, Var weight, Var bias);
Var matmul(Var a, Var b);

// Rows of table (N x C) picked by index; repeated indices accumulate grads.
Var gather_rows(Var table, std::vector<std::size_t> indices);
// Segment s covers rows [offsets[s], offsets[s+1]) of X (R x C); output S x C.
// Empty segments produce zero rows.
Var segment_sum(Var x, std::vector<std::size_t> offsets);
Var segment_mean(Var x, std::vector<std::size_t> offsets);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var reshape(Var x, Shape shape);

// Each row of A (R x C) dotted with the vector b (C); output has R elements.
Var row_dot(Var a, Var b);
// Row r of A dotted with row r of B; A and B share shape R x C.
Var rowwise_dot(Var a, Var b);
Var dot(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
// Numerically stable log(sum(exp(x))) over all elements.
Var logsumexp(Var a);
// Log-sum-exp of each segment [offsets[s], offsets[s+1]) of the flattened
// input; every segment must be nonempty.
Var segment_logsumexp(Var a, std::vector<std::size_t> offsets);

}  // namespace crir::numcore
