#pragma once

#include <span>
#include <vector>

#include "bsrl/loss.hpp"
#include "bsrl/rollout.hpp"

// Batch kernels over independent episodes. Each has a serial reference and an
// OpenMP version; both produce bit-identical results because every episode
// owns its random stream and gradient rows are reduced in episode order.
namespace bsrl::kernels {

std::vector<EpisodeTrace> simulate_serial(const Policy& policy, const StopOrGuessEnv& env,
                                          const RolloutRequest& request);
std::vector<EpisodeTrace> simulate_parallel(const Policy& policy, const StopOrGuessEnv& env,
                                            const RolloutRequest& request);

/// Per-episode sums of the four loss terms (not yet divided by step count).
struct EpisodeLoss {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double aux = 0.0;
};

/// Replays one episode. If `grad` is non-empty, accumulates
/// scale * d(episode loss)/d(params) into it.
EpisodeLoss replay_episode(const Policy& policy, std::span<const double> params, const EpisodeTrace& trace,
                           const EpisodeReturns& returns, const LossConfig& config, Tape& tape,
                           std::span<double> grad, double scale);

/// Fills losses[i] and, when `with_grad`, row i of `rows` (episodes x params).
void replay_batch_serial(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                         std::span<const EpisodeReturns> returns, const LossConfig& config, double scale,
                         bool with_grad, std::span<EpisodeLoss> losses, std::span<double> rows);
void replay_batch_parallel(const Policy& policy, std::span<const double> params, const Rollout& rollout,
                           std::span<const EpisodeReturns> returns, const LossConfig& config, double scale,
                           bool with_grad, std::span<EpisodeLoss> losses, std::span<double> rows);

/// Number of OpenMP threads the parallel kernels will use (1 without OpenMP).
int max_threads();
/// Caps the thread count (no-op without OpenMP). n < 1 is ignored.
void set_threads(int n);

}  // namespace bsrl::kernels
