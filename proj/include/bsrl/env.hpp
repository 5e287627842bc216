#pragma once

#include <span>
#include <utility>
#include <vector>

#include "bsrl/rng.hpp"

namespace bsrl {

/// Hidden-noise stop-or-guess task. Each episode draws a label z in {-1,+1}
/// and a noise scale sigma; the agent sees x_t = z + N(0, sigma^2) and either
/// waits or commits to a guess.
struct EnvConfig {
  double sigma_lo = 0.3;
  double sigma_hi = 1.2;
  int max_steps = 10;
  double wait_penalty = 0.05;
  double correct_reward = 1.0;
  double incorrect_reward = -1.0;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const EnvConfig&) const = default;
};

enum class Action : int { kWait = 0, kGuessPos = 1, kGuessNeg = 2 };

inline constexpr int kNumActions = 3;

struct EpisodeState {
  int z = 1;
  double sigma = 1.0;
  int t = 0;
  bool done = false;
  double last_obs = 0.0;
  // Every observation emitted so far; kept for posterior-oracle queries.
  std::vector<double> observations;
};

struct StepResult {
  double obs = 0.0;  // 0 on terminal steps; never fed to a policy
  double reward = 0.0;
  bool done = false;
};

struct PosteriorMoments {
  double mean = 0.0;
  double variance = 1.0;
};

class StopOrGuessEnv {
 public:
  explicit StopOrGuessEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }

  /// Draws z, then sigma, then the first observation, in that order.
  std::pair<EpisodeState, double> reset(Rng& rng) const;

  StepResult step(EpisodeState& state, Action action, Rng& rng) const;

 private:
  double observe(EpisodeState& state, Rng& rng) const;

  EnvConfig config_;
};

/// Exact posterior over z given observations under a uniform prior:
/// mean = tanh(sum(x) / sigma^2), variance = 1 - mean^2 (computed as sech^2).
PosteriorMoments posterior_moments(std::span<const double> observations, double sigma);

/// log(1 - mean^2) evaluated without cancellation, finite for any evidence.
double log_posterior_variance(std::span<const double> observations, double sigma);

}  // namespace bsrl
