#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsrl/policy.hpp"

namespace bsrl {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double bound = 0.0;
  std::string detail;
};

enum class InjectedFault { kNone, kGradient };

struct SelfCheckOptions {
  std::uint64_t seed = 0;
  std::size_t gradcheck_episodes = 8;
  std::size_t posterior_cases = 1000;
  std::size_t stability_steps = 10000;
  double stability_input_bound = 5.0;
  std::size_t ece_samples = 100000;
  // Training steps of the two identical runs compared byte for byte.
  int determinism_steps = 40;
  int recomposition_steps = 10;
  InjectedFault fault = InjectedFault::kNone;
};

CheckResult check_gradient(Variant variant, const AdapterConfig& adapter, const SelfCheckOptions& options);
CheckResult check_posterior_oracle(const SelfCheckOptions& options);
CheckResult check_stability(Variant variant, const SelfCheckOptions& options);
CheckResult check_synthetic_ece(const SelfCheckOptions& options);
CheckResult check_softmax_identities();
CheckResult check_checkpoint_roundtrip(const SelfCheckOptions& options);
CheckResult check_determinism(const SelfCheckOptions& options);
CheckResult check_loss_recomposition(Variant variant, const SelfCheckOptions& options);

/// Every check above, for every variant where it applies.
std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& options);

/// "PASS name: measured <= bound (detail)" style line.
std::string format_check(const CheckResult& result);

}  // namespace bsrl
