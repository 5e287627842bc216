#include "bsrl/rollout.hpp"

#include <cmath>
#include <numeric>

#include "bsrl/kernels.hpp"
#include "bsrl/layers.hpp"

namespace bsrl {

std::size_t Rollout::total_steps() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.length();
  return n;
}

double Rollout::mean_return() const {
  if (episodes.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : episodes) acc += e.total_return;
  return acc / static_cast<double>(episodes.size());
}

double Rollout::mean_latency(int horizon) const {
  if (episodes.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : episodes) acc += e.latency(horizon);
  return acc / static_cast<double>(episodes.size());
}

EpisodeTrace run_episode(const Policy& policy, const StopOrGuessEnv& env, Rng& rng, bool argmax, Tape& scratch) {
  EpisodeTrace tr;
  auto [state, x] = env.reset(rng);
  tr.sigma = state.sigma;
  tr.z = state.z;
  RecurrentState rs = policy.initial_state();
  while (true) {
    const PolicyOutput out = policy.forward(rs, x, scratch);
    CategoricalSample pick;
    if (argmax) {
      pick.action = argmax_action(out.logits);
      const auto p = softmax(out.logits);
      pick.log_prob = std::log(p[static_cast<std::size_t>(pick.action)]);
      pick.entropy = entropy_of(out.logits);
    } else {
      pick = categorical_head(out.logits, rng);
    }
    tr.obs.push_back(x);
    tr.actions.push_back(pick.action);
    tr.log_probs.push_back(pick.log_prob);
    tr.entropies.push_back(pick.entropy);
    tr.values.push_back(out.value);
    if (out.mu) {
      tr.mu.insert(tr.mu.end(), out.mu->begin(), out.mu->end());
      tr.log_sigma.insert(tr.log_sigma.end(), out.log_sigma->begin(), out.log_sigma->end());
    }
    const auto action = static_cast<Action>(pick.action);
    if (action != Action::kWait) {
      tr.commit_step = state.t;
      tr.commit_guess_logits = {out.logits[1], out.logits[2]};
    }
    const StepResult res = env.step(state, action, rng);
    tr.rewards.push_back(res.reward);
    tr.total_return += res.reward;
    if (res.done) break;
    x = res.obs;
  }
  return tr;
}

Rollout collect_rollouts(const Policy& policy, const EnvConfig& env, const RolloutRequest& request, Exec exec) {
  const StopOrGuessEnv e(env);
  Rollout r;
  r.belief_dim = has_belief(policy.variant()) ? policy.dims().belief : 0;
  r.episodes = exec == Exec::kParallel ? kernels::simulate_parallel(policy, e, request)
                                       : kernels::simulate_serial(policy, e, request);
  return r;
}

}  // namespace bsrl
