#include "bsrl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bsrl/errors.hpp"
#include "bsrl/layers.hpp"

namespace bsrl::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

EpisodeTrace simulate_one(const Policy& policy, const StopOrGuessEnv& env, const RolloutRequest& req,
                          std::size_t i, Tape& tape) {
  Rng rng = make_stream(req.seed, req.domain, req.first_index + i);
  return run_episode(policy, env, rng, req.argmax, tape);
}

// Exceptions may not escape an OpenMP region; the first one is rethrown after.
class ErrorSlot {
 public:
  void capture() {
#ifdef _OPENMP
#pragma omp critical(bsrl_error_slot)
#endif
    {
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

}  // namespace

std::vector<EpisodeTrace> simulate_serial(const Policy& policy, const StopOrGuessEnv& env,
                                          const RolloutRequest& request) {
  std::vector<EpisodeTrace> out(request.episodes);
  Tape tape;
  for (std::size_t i = 0; i < request.episodes; ++i) {
    out[i] = simulate_one(policy, env, request, i, tape);
  }
  return out;
}

std::vector<EpisodeTrace> simulate_parallel(const Policy& policy, const StopOrGuessEnv& env,
                                            const RolloutRequest& request) {
  std::vector<EpisodeTrace> out(request.episodes);
  const auto n = static_cast<std::ptrdiff_t>(request.episodes);
  ErrorSlot err;
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    Tape tape;
#ifdef _OPENMP
#pragma omp for schedule(dynamic, 16)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        out[static_cast<std::size_t>(i)] = simulate_one(policy, env, request, static_cast<std::size_t>(i), tape);
      } catch (...) {
        err.capture();
      }
    }
  }
  err.rethrow();
  return out;
}

EpisodeLoss replay_episode(const Policy& policy, std::span<const double> params, const EpisodeTrace& trace,
                           const EpisodeReturns& returns, const LossConfig& config, Tape& tape,
                           std::span<double> grad, double scale) {
  tape.reset(params);
  GraphState state = policy.graph_initial_state(tape);
  const std::size_t T = trace.length();
  if (returns.returns.size() != T || returns.advantages.size() != T) {
    throw ContractViolation("returns do not match the episode length");
  }
  if (config.privileged && !(trace.sigma > 0.0)) {
    throw ContractViolation("privileged loss needs the episode's hidden sigma");
  }

  Var pol = tape.constant(0.0);
  Var val = tape.constant(0.0);
  Var ent = tape.constant(0.0);
  Var aux = tape.constant(0.0);
  const std::size_t db = policy.dims().belief;
  for (std::size_t t = 0; t < T; ++t) {
    const StepGraph step = policy.graph_step(tape, state, trace.obs[t]);
    const CategoricalTerms terms = categorical_terms(tape, step.logits, trace.actions[t]);
    const double adv = returns.advantages[t];

    Var pol_t;
    if (config.ppo_clip > 0.0) {
      const Var ratio = tape.exp(tape.shift(terms.log_prob, -trace.log_probs[t]));
      const double r = tape.item(ratio);
      const double lo = 1.0 - config.ppo_clip;
      const double hi = 1.0 + config.ppo_clip;
      // min(r A, clip(r) A): the clipped branch is a constant in the parameters.
      const bool clipped = (adv >= 0.0 && r > hi) || (adv < 0.0 && r < lo);
      pol_t = clipped ? tape.constant(-std::clamp(r, lo, hi) * adv) : tape.scale(ratio, -adv);
    } else {
      pol_t = tape.scale(terms.log_prob, -adv);
    }
    pol = tape.add(pol, pol_t);
    val = tape.add(val, tape.square(tape.shift(step.value, -returns.returns[t])));
    ent = tape.add(ent, terms.entropy);

    if (config.privileged) {
      if (!step.mu || !step.log_sigma) {
        throw ContractViolation("privileged loss needs a belief variant");
      }
      const BeliefTarget target = belief_target(std::span<const double>(trace.obs).first(t + 1), trace.sigma,
                                                config.target_variance_floor);
      const std::size_t width = config.broadcast_targets ? db : 1;
      const Var mu = tape.slice(*step.mu, 0, width);
      const Var ls = tape.slice(*step.log_sigma, 0, width);
      const Var mu_err = tape.sum(tape.square(tape.shift(mu, -target.mean)));
      const Var ls_err = tape.sum(tape.square(tape.shift(ls, -target.log_variance)));
      aux = tape.add(aux, tape.add(tape.scale(mu_err, config.beta_mu), tape.scale(ls_err, config.beta_sigma)));
    }
  }

  EpisodeLoss out{tape.item(pol), tape.item(val), tape.item(ent), tape.item(aux)};
  if (!grad.empty()) {
    const Var total = tape.add(tape.sub(tape.add(pol, tape.scale(val, config.c_v)), tape.scale(ent, config.c_e)), aux);
    tape.backward(total, grad, scale);
  }
  return out;
}

namespace {

void replay_range(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                  std::span<const EpisodeReturns> returns, const LossConfig& config, double scale, bool with_grad,
                  std::span<EpisodeLoss> losses, std::span<double> rows, std::size_t i, Tape& tape) {
  std::span<double> row;
  if (with_grad) {
    row = rows.subspan(i * params.size(), params.size());
    std::fill(row.begin(), row.end(), 0.0);
  }
  losses[i] = replay_episode(policy, params, rollout.episodes[i], returns[i], config, tape, row, scale);
}

void check_batch(const Rollout& rollout, std::span<const EpisodeReturns> returns, std::span<const double> params,
                 bool with_grad, std::span<EpisodeLoss> losses, std::span<double> rows) {
  const std::size_t n = rollout.episodes.size();
  if (returns.size() != n || losses.size() != n || (with_grad && rows.size() != n * params.size())) {
    throw ContractViolation("replay_batch: buffer sizes do not match the rollout");
  }
}

}  // namespace

void replay_batch_serial(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                         std::span<const EpisodeReturns> returns, const LossConfig& config, double scale,
                         bool with_grad, std::span<EpisodeLoss> losses, std::span<double> rows) {
  check_batch(rollout, returns, params, with_grad, losses, rows);
  Tape tape;
  for (std::size_t i = 0; i < rollout.episodes.size(); ++i) {
    replay_range(policy, params, rollout, returns, config, scale, with_grad, losses, rows, i, tape);
  }
}

void replay_batch_parallel(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                           std::span<const EpisodeReturns> returns, const LossConfig& config, double scale,
                           bool with_grad, std::span<EpisodeLoss> losses, std::span<double> rows) {
  check_batch(rollout, returns, params, with_grad, losses, rows);
  const auto n = static_cast<std::ptrdiff_t>(rollout.episodes.size());
  ErrorSlot err;
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    Tape tape;
#ifdef _OPENMP
#pragma omp for schedule(dynamic, 8)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        replay_range(policy, params, rollout, returns, config, scale, with_grad, losses, rows,
                     static_cast<std::size_t>(i), tape);
      } catch (...) {
        err.capture();
      }
    }
  }
  err.rethrow();
}

}  // namespace bsrl::kernels
