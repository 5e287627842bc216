#include "bsrl/loss.hpp"

#include <algorithm>
#include <cmath>

#include "bsrl/env.hpp"
#include "bsrl/errors.hpp"
#include "bsrl/kernels.hpp"

namespace bsrl {

std::vector<EpisodeReturns> returns_and_advantages(const Rollout& rollout, double gamma) {
  std::vector<EpisodeReturns> out(rollout.episodes.size());
  for (std::size_t e = 0; e < rollout.episodes.size(); ++e) {
    const EpisodeTrace& tr = rollout.episodes[e];
    const std::size_t T = tr.length();
    if (tr.rewards.size() != T || tr.values.size() != T) {
      throw ContractViolation("incomplete episode trace");
    }
    EpisodeReturns& r = out[e];
    r.returns.assign(T, 0.0);
    r.advantages.assign(T, 0.0);
    double g = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      g = tr.rewards[t] + gamma * g;
      r.returns[t] = g;
      r.advantages[t] = g - tr.values[t];
    }
  }
  return out;
}

LossBreakdown LossBreakdown::compose(double policy, double value, double entropy, double aux,
                                     const LossConfig& cfg) {
  LossBreakdown b;
  b.policy_loss = policy;
  b.value_loss = value;
  b.entropy = entropy;
  b.belief_aux = aux;
  b.total = policy + cfg.c_v * value - cfg.c_e * entropy + aux;
  return b;
}

BeliefTarget belief_target(std::span<const double> prefix, double sigma, double variance_floor) {
  const PosteriorMoments m = posterior_moments(prefix, sigma);
  const double log_var = log_posterior_variance(prefix, sigma);
  return {m.mean, std::max(log_var, std::log(variance_floor))};
}

double belief_aux_loss(const Rollout& rollout, const LossConfig& config) {
  if (!config.privileged) {
    return 0.0;
  }
  const std::size_t db = rollout.belief_dim;
  if (db == 0) {
    throw ContractViolation("belief_aux_loss needs a rollout with belief readouts");
  }
  const std::size_t width = config.broadcast_targets ? db : 1;
  double acc = 0.0;
  std::size_t steps = 0;
  for (const EpisodeTrace& tr : rollout.episodes) {
    if (!(tr.sigma > 0.0)) {
      throw ContractViolation("belief_aux_loss needs the episode's hidden sigma");
    }
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const BeliefTarget target =
          belief_target(std::span<const double>(tr.obs).first(t + 1), tr.sigma, config.target_variance_floor);
      double mu_err = 0.0;
      double ls_err = 0.0;
      for (std::size_t k = 0; k < width; ++k) {
        mu_err += std::pow(tr.mu[t * db + k] - target.mean, 2);
        ls_err += std::pow(tr.log_sigma[t * db + k] - target.log_variance, 2);
      }
      acc += config.beta_mu * mu_err + config.beta_sigma * ls_err;
      ++steps;
    }
  }
  return steps == 0 ? 0.0 : acc / static_cast<double>(steps);
}

LossBreakdown actor_critic_loss(const Rollout& rollout, std::span<const EpisodeReturns> returns,
                                const LossConfig& config) {
  if (returns.size() != rollout.episodes.size()) {
    throw ContractViolation("returns do not match the rollout");
  }
  double pol = 0.0, val = 0.0, ent = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < rollout.episodes.size(); ++e) {
    const EpisodeTrace& tr = rollout.episodes[e];
    for (std::size_t t = 0; t < tr.length(); ++t) {
      pol += -returns[e].advantages[t] * tr.log_probs[t];
      val += std::pow(tr.values[t] - returns[e].returns[t], 2);
      ent += tr.entropies[t];
      ++steps;
    }
  }
  const double n = steps == 0 ? 1.0 : static_cast<double>(steps);
  return LossBreakdown::compose(pol / n, val / n, ent / n, belief_aux_loss(rollout, config), config);
}

namespace {

LossAndGrad replay(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                   std::span<const EpisodeReturns> returns, const LossConfig& config, Exec exec, bool with_grad) {
  if (params.size() != policy.params().size()) {
    throw ContractViolation("parameter vector does not match the policy layout");
  }
  const std::size_t n = rollout.episodes.size();
  const std::size_t steps = rollout.total_steps();
  const double inv = steps == 0 ? 0.0 : 1.0 / static_cast<double>(steps);
  std::vector<kernels::EpisodeLoss> losses(n);
  std::vector<double> rows(with_grad ? n * params.size() : 0);
  if (exec == Exec::kParallel) {
    kernels::replay_batch_parallel(policy, params, rollout, returns, config, inv, with_grad, losses, rows);
  } else {
    kernels::replay_batch_serial(policy, params, rollout, returns, config, inv, with_grad, losses, rows);
  }

  // Ordered reduction keeps the result independent of thread scheduling.
  double pol = 0.0, val = 0.0, ent = 0.0, aux = 0.0;
  for (const auto& l : losses) {
    pol += l.policy;
    val += l.value;
    ent += l.entropy;
    aux += l.aux;
  }
  LossAndGrad out;
  out.loss = LossBreakdown::compose(pol * inv, val * inv, ent * inv, aux * inv, config);
  if (with_grad) {
    out.grad.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = rows.data() + i * params.size();
      for (std::size_t j = 0; j < params.size(); ++j) {
        out.grad[j] += row[j];
      }
    }
  }
  return out;
}

}  // namespace

LossAndGrad batch_loss_gradient(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                                std::span<const EpisodeReturns> returns, const LossConfig& config, Exec exec) {
  return replay(policy, params, rollout, returns, config, exec, true);
}

LossBreakdown batch_loss(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                         std::span<const EpisodeReturns> returns, const LossConfig& config) {
  return replay(policy, params, rollout, returns, config, Exec::kSerial, false).loss;
}

}  // namespace bsrl
