#pragma once

#include <stdexcept>
#include <string>

namespace bsrl {

/// Invalid configuration value or schema. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke an operation's precondition (shape mismatch, stepping a done
/// episode, backward on an empty tape, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite values reached a place that requires finite input.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss or gradient. Maps to exit code 3.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// A checkpoint or manifest did not match its recorded hash. Exit code 4.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsrl
