#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace bsrl {

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(std::size_t dim, AdamConfig cfg) : config(cfg), m(dim, 0.0), v(dim, 0.0) {}
};

/// One bias-corrected Adam update in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state);

}  // namespace bsrl
