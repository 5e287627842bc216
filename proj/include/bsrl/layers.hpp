#pragma once

#include <array>
#include <span>

#include "bsrl/rng.hpp"
#include "bsrl/tape.hpp"

namespace bsrl {

enum class Activation { kIdentity, kTanh, kRelu, kSoftplus };

/// activation(W x + b), recorded on the tape.
Var dense(Tape& tape, Var x, const Slice& weight, const Slice& bias, Activation act);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; biases are left at zero.
void init_dense_weight(std::span<double> weight, std::size_t fan_in, Rng& rng);

struct CategoricalSample {
  int action = 0;
  double log_prob = 0.0;
  double entropy = 0.0;
};

/// Max-shifted softmax. Throws NumericError on non-finite logits.
std::array<double, 3> softmax(std::span<const double> logits);
double entropy_of(std::span<const double> logits);

/// Samples an action from softmax(logits); reports log pi(a) and H(pi).
CategoricalSample categorical_head(std::span<const double> logits, Rng& rng);

/// Index of the largest logit (first on ties).
int argmax_action(std::span<const double> logits);

struct CategoricalTerms {
  Var log_prob;  // log pi(action)
  Var entropy;   // -sum p log p
};

CategoricalTerms categorical_terms(Tape& tape, Var logits, int action);

}  // namespace bsrl
