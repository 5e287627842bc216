#include "bsrl/env.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "bsrl/errors.hpp"

namespace bsrl {

void EnvConfig::validate() const {
  if (!(std::isfinite(sigma_lo) && sigma_lo > 0.0)) {
    throw ConfigError("env.sigma_lo must be a finite positive number");
  }
  if (!(std::isfinite(sigma_hi) && sigma_hi >= sigma_lo)) {
    throw ConfigError("env.sigma_hi must be finite and >= env.sigma_lo");
  }
  if (max_steps < 1) {
    throw ConfigError("env.max_steps must be >= 1");
  }
  if (!std::isfinite(wait_penalty) || !std::isfinite(correct_reward) ||
      !std::isfinite(incorrect_reward)) {
    throw ConfigError("env rewards must be finite");
  }
}

StopOrGuessEnv::StopOrGuessEnv(EnvConfig config) : config_(config) { config_.validate(); }

double StopOrGuessEnv::observe(EpisodeState& state, Rng& rng) const {
  std::normal_distribution<double> noise(0.0, state.sigma);
  const double x = static_cast<double>(state.z) + noise(rng);
  state.last_obs = x;
  state.observations.push_back(x);
  return x;
}

std::pair<EpisodeState, double> StopOrGuessEnv::reset(Rng& rng) const {
  EpisodeState state;
  std::bernoulli_distribution coin(0.5);
  state.z = coin(rng) ? 1 : -1;
  std::uniform_real_distribution<double> sigma(config_.sigma_lo, config_.sigma_hi);
  state.sigma = config_.sigma_lo == config_.sigma_hi ? config_.sigma_lo : sigma(rng);
  state.observations.reserve(static_cast<std::size_t>(config_.max_steps));
  const double x0 = observe(state, rng);
  return {std::move(state), x0};
}

StepResult StopOrGuessEnv::step(EpisodeState& state, Action action, Rng& rng) const {
  if (state.done) {
    throw ContractViolation("step() called on a finished episode");
  }
  StepResult result;
  switch (action) {
    case Action::kWait: {
      result.reward = -config_.wait_penalty;
      ++state.t;
      if (state.t >= config_.max_steps) {
        // Forced termination: accumulated wait penalties are the whole score.
        state.done = true;
        result.done = true;
        result.obs = 0.0;
      } else {
        result.obs = observe(state, rng);
      }
      break;
    }
    case Action::kGuessPos:
    case Action::kGuessNeg: {
      const int guess = action == Action::kGuessPos ? 1 : -1;
      result.reward = guess == state.z ? config_.correct_reward : config_.incorrect_reward;
      state.done = true;
      result.done = true;
      result.obs = 0.0;
      break;
    }
    default:
      throw ContractViolation("unknown action " + std::to_string(static_cast<int>(action)));
  }
  return result;
}

namespace {

double evidence(std::span<const double> observations, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ContractViolation("posterior_moments requires sigma > 0");
  }
  const double sum = std::accumulate(observations.begin(), observations.end(), 0.0);
  return sum / (sigma * sigma);
}

}  // namespace

PosteriorMoments posterior_moments(std::span<const double> observations, double sigma) {
  const double y = evidence(observations, sigma);
  // sech^2 keeps full relative precision where 1 - tanh^2 would cancel to 0.
  const double e = std::exp(-2.0 * std::abs(y));
  return {std::tanh(y), 4.0 * e / ((1.0 + e) * (1.0 + e))};
}

double log_posterior_variance(std::span<const double> observations, double sigma) {
  // 1 - tanh(y)^2 = sech(y)^2, and log sech(y) = log 2 - |y| - log1p(exp(-2|y|)).
  const double y = std::abs(evidence(observations, sigma));
  return 2.0 * (std::log(2.0) - y - std::log1p(std::exp(-2.0 * y)));
}

}  // namespace bsrl
