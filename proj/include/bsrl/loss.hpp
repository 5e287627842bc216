#pragma once

#include <span>
#include <vector>

#include "bsrl/policy.hpp"
#include "bsrl/rollout.hpp"

namespace bsrl {

struct EpisodeReturns {
  std::vector<double> returns;     // G_t, Monte Carlo, no bootstrap past termination
  std::vector<double> advantages;  // G_t - V_t with V_t held constant
};

std::vector<EpisodeReturns> returns_and_advantages(const Rollout& rollout, double gamma);

struct LossConfig {
  double c_v = 0.5;
  double c_e = 0.01;
  // Privileged belief supervision; only active when `privileged` is set.
  bool privileged = false;
  double beta_mu = 1.0;
  double beta_sigma = 1.0;
  bool broadcast_targets = false;      // supervise every belief dim instead of dim 0
  double target_variance_floor = 1e-4;  // log-variance targets are clamped at log(floor)
  // Clipped surrogate; 0 disables it and uses -A log pi.
  double ppo_clip = 0.0;
};

struct LossBreakdown {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double belief_aux = 0.0;
  double total = 0.0;

  /// total = policy + c_v * value - c_e * entropy + belief_aux, in that order.
  static LossBreakdown compose(double policy, double value, double entropy, double aux, const LossConfig& cfg);
};

/// Loss from the values recorded in the rollout (no replay).
LossBreakdown actor_critic_loss(const Rollout& rollout, std::span<const EpisodeReturns> returns,
                                const LossConfig& config);

/// Mean over steps of beta_mu ||mu - mu*||^2 + beta_sigma ||log_sigma - log_sigma*||^2
/// with targets from the exact posterior over each observation prefix.
double belief_aux_loss(const Rollout& rollout, const LossConfig& config);

struct BeliefTarget {
  double mean = 0.0;
  double log_variance = 0.0;
};
BeliefTarget belief_target(std::span<const double> observation_prefix, double sigma, double variance_floor);

struct LossAndGrad {
  LossBreakdown loss;
  std::vector<double> grad;
};

/// Replays every episode on a tape at `params` (laid out like the policy's),
/// with actions and returns/advantages frozen, and returns the loss and its
/// exact gradient. When ppo_clip > 0, `rollout.log_probs` are the behaviour
/// log-probabilities.
LossAndGrad batch_loss_gradient(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                                std::span<const EpisodeReturns> returns, const LossConfig& config,
                                Exec exec = Exec::kParallel);

/// Same replay without the backward pass.
LossBreakdown batch_loss(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                         std::span<const EpisodeReturns> returns, const LossConfig& config);

}  // namespace bsrl
