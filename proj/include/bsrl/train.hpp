#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bsrl/adam.hpp"
#include "bsrl/env.hpp"
#include "bsrl/loss.hpp"
#include "bsrl/policy.hpp"

namespace bsrl {

struct TrainConfig {
  int opt_steps = 1600;
  int batch_episodes = 256;
  int seq_len = 10;  // must equal env.max_steps
  std::vector<std::uint64_t> seeds{0, 1, 2};
  double gamma = 0.99;
  LossConfig loss;  // c_v, c_e, beta_mu, beta_sigma; `privileged` follows the variant
  AdamConfig adam;
  int update_epochs = 1;   // >1 only makes sense with loss.ppo_clip > 0
  int snapshot_every = 200;
  int snapshot_episodes = 2000;
  EnvConfig env;
  Variant variant = Variant::kBelief;
  AdapterConfig adapter;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  /// Loss settings with `privileged` derived from the variant.
  LossConfig effective_loss() const;
};

struct MetricsRow {
  int step = 0;
  LossBreakdown loss;
  double mean_return = 0.0;
  double mean_commit_step = 0.0;  // never-commit episodes count at seq_len
  double grad_norm = 0.0;
};

struct Snapshot {
  int step = 0;
  double mean_return = 0.0;
  double mean_latency = 0.0;
};

struct TrainResult {
  Policy policy;
  std::vector<MetricsRow> metrics;
  std::vector<Snapshot> snapshots;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// opt_steps iterations of: collect batch_episodes on-policy episodes, replay
/// them for the actor-critic loss, one Adam step. Throws DivergenceError (with
/// step, loss components and gradient norm in the message) on a non-finite
/// loss or gradient.
TrainResult train_run(const TrainConfig& config, std::uint64_t seed, Exec exec = Exec::kParallel,
                      const ProgressFn& progress = {});

/// One row per optimization step; `header` lines are emitted as '#' comments.
std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::string>& header);
std::string snapshots_csv(const std::vector<Snapshot>& rows, const std::vector<std::string>& header);

/// Parses metrics_csv output (comments skipped).
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

}  // namespace bsrl
