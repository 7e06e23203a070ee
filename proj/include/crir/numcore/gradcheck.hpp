#pragma once

#include <functional>

#include "crir/numcore/tape.hpp"

namespace crir::numcore {

// Builds a scalar on the given tape. Called repeatedly; must be deterministic.
using ScalarFn = std::function<Var(Tape&, Var)>;
using ParamScalarFn = std::function<Var(Tape&)>;

// Max over coordinates of |g_auto - g_fd| / max(1, |g_fd|) where g_fd is the
// central difference (f(x + h e_i) - f(x - h e_i)) / 2h.
// Throws if h <= 0 or f is non-finite at a perturbed point.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

// Same check against a persistent parameter that f reads via tape.param().
// The parameter is perturbed in place and restored; its grad slot is reset.
double finite_diff_check(const ParamScalarFn& f, Tensor& param, double h = 1e-5);

}  // namespace crir::numcore
