#include "bsrl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bsrl/errors.hpp"

namespace bsrl {

GradCheckReport finite_diff_check(const LossFn& loss, const GradFn& grad, std::span<const double> params,
                                  const GradCheckOptions& options, Rng& rng) {
  const std::vector<double> analytic = grad(params);
  if (analytic.size() != params.size()) {
    throw ContractViolation("gradient closure returned the wrong dimension");
  }

  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > options.min_coordinates) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.min_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  std::vector<double> probe(params.begin(), params.end());
  for (std::size_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + options.step;
    const double up = loss(probe);
    probe[i] = orig - options.step;
    const double down = loss(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * options.step);
    const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric), options.denom_floor);
    const double rel = std::abs(analytic[i] - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, std::isfinite(rel) ? rel : INFINITY);
    if (!(rel < options.tolerance)) {
      report.failures.push_back({i, analytic[i], numeric, rel});
    }
  }
  report.coordinates_checked = coords.size();
  return report;
}

}  // namespace bsrl
