#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "bsrl/env.hpp"
#include "bsrl/policy.hpp"
#include "bsrl/rng.hpp"

namespace bsrl {

enum class Exec { kSerial, kParallel };

/// One episode's trace. obs[t] is the observation the policy saw before
/// taking actions[t]. sigma and z are privileged and never reach the policy.
struct EpisodeTrace {
  std::vector<double> obs;
  std::vector<int> actions;
  std::vector<double> rewards;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> entropies;
  std::vector<double> mu;         // length() x d_b row-major; empty without a belief
  std::vector<double> log_sigma;  // same layout as mu
  std::optional<int> commit_step;
  std::array<double, 2> commit_guess_logits{};  // (GuessPos, GuessNeg) at the commit step
  double sigma = 0.0;
  int z = 0;
  double total_return = 0.0;

  std::size_t length() const { return actions.size(); }
  /// Commit step, or the horizon for episodes that never guess.
  int latency(int horizon) const { return commit_step.value_or(horizon); }
};

struct Rollout {
  std::vector<EpisodeTrace> episodes;
  std::size_t belief_dim = 0;

  std::size_t total_steps() const;
  double mean_return() const;
  double mean_latency(int horizon) const;
};

/// Plays one episode with a fresh recurrent state. Actions are sampled from
/// pi unless `argmax` is set.
EpisodeTrace run_episode(const Policy& policy, const StopOrGuessEnv& env, Rng& rng, bool argmax, Tape& scratch);

struct RolloutRequest {
  std::size_t episodes = 1;
  std::uint64_t seed = 0;
  StreamDomain domain = StreamDomain::kTrain;
  std::uint64_t first_index = 0;  // episode i uses stream first_index + i
  bool argmax = false;
};

/// Episodes are independent and each owns its stream, so serial and parallel
/// execution give identical rollouts.
Rollout collect_rollouts(const Policy& policy, const EnvConfig& env, const RolloutRequest& request,
                         Exec exec = Exec::kParallel);

}  // namespace bsrl
