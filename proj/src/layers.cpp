#include "bsrl/layers.hpp"

#include <algorithm>
#include <cmath>

#include "bsrl/errors.hpp"

namespace bsrl {

Var dense(Tape& tape, Var x, const Slice& weight, const Slice& bias, Activation act) {
  const Var z = tape.affine(weight, bias, x);
  switch (act) {
    case Activation::kIdentity: return z;
    case Activation::kTanh: return tape.unary(Unary::kTanh, z);
    case Activation::kRelu: return tape.unary(Unary::kRelu, z);
    case Activation::kSoftplus: return tape.unary(Unary::kSoftplus, z);
  }
  return z;
}

void init_dense_weight(std::span<double> weight, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& w : weight) {
    w = u(rng);
  }
}

std::array<double, 3> softmax(std::span<const double> logits) {
  if (logits.size() != 3) {
    throw ContractViolation("categorical head expects 3 logits");
  }
  for (double l : logits) {
    if (!std::isfinite(l)) {
      throw NumericError("non-finite logit in categorical head");
    }
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  std::array<double, 3> p{};
  double z = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& v : p) {
    v /= z;
  }
  return p;
}

namespace {

std::array<double, 3> log_softmax3(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) {
    z += std::exp(l - m);
  }
  const double lse = m + std::log(z);
  return {logits[0] - lse, logits[1] - lse, logits[2] - lse};
}

}  // namespace

double entropy_of(std::span<const double> logits) {
  const auto p = softmax(logits);
  const auto lp = log_softmax3(logits);
  double h = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    h -= p[i] * lp[i];
  }
  return h;
}

CategoricalSample categorical_head(std::span<const double> logits, Rng& rng) {
  const auto p = softmax(logits);
  const auto lp = log_softmax3(logits);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  int action = 2;
  double cum = 0.0;
  for (int i = 0; i < 3; ++i) {
    cum += p[static_cast<std::size_t>(i)];
    if (r < cum) {
      action = i;
      break;
    }
  }
  double h = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    h -= p[i] * lp[i];
  }
  return {action, lp[static_cast<std::size_t>(action)], h};
}

int argmax_action(std::span<const double> logits) {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

CategoricalTerms categorical_terms(Tape& tape, Var logits, int action) {
  const Var lp = tape.log_softmax(logits);
  const Var p = tape.exp(lp);
  const Var entropy = tape.scale(tape.sum(tape.mul(p, lp)), -1.0);
  return {tape.pick(lp, static_cast<std::size_t>(action)), entropy};
}

}  // namespace bsrl
