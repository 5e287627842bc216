#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bsrl/rng.hpp"

namespace bsrl {

struct CoordinateError {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::vector<CoordinateError> failures;  // coordinates above tolerance
  bool passed() const { return failures.empty(); }
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::size_t min_coordinates = 64;
  // Relative error is |a - n| / max(|a| + |n|, denom_floor).
  double denom_floor = 1e-6;
};

using LossFn = std::function<double(std::span<const double>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

/// Compares the reverse-mode gradient at `params` with central differences on
/// a random subset of coordinates (all of them when the vector is small).
GradCheckReport finite_diff_check(const LossFn& loss, const GradFn& grad, std::span<const double> params,
                                  const GradCheckOptions& options, Rng& rng);

}  // namespace bsrl
