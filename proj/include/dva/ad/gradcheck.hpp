#pragma once

// Central finite-difference checks, the oracle for every analytic gradient
// in this library.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dva/ad/tape.hpp"
#include "dva/ad/tensor.hpp"

namespace dva::ad {

enum class ErrorMeasure {
  // |fd - an| / (1 + |an|): per-primitive checks.
  mixed,
  // |fd - an| / max(|an|, |fd|, 1e-3 * max_i |an_i|): long chains whose
  // gradients span many orders of magnitude.
  relative,
};

struct FdReport {
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  int64_t checked = 0;
};

// f builds a scalar on `tape` from the leaf `x`.
using TapeFunction = std::function<Tensor(Tape& tape, const Tensor& x)>;

// Differentiates f at x with backward() and compares every coordinate with
// (f(x + h e_i) - f(x - h e_i)) / 2h. Throws if f is not finite.
FdReport finite_difference_check(const TapeFunction& f, const Tensor& x,
                                 double step = 1e-5,
                                 ErrorMeasure measure = ErrorMeasure::mixed);

// Same comparison for a plain function and a precomputed gradient. When
// `coords` is non-empty only those coordinates are perturbed.
FdReport compare_with_finite_differences(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, std::span<const double> analytic, double step,
    ErrorMeasure measure, std::span<const int64_t> coords = {});

}  // namespace dva::ad
