#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bsrl/env.hpp"
#include "bsrl/policy.hpp"
#include "bsrl/rollout.hpp"

namespace bsrl {

struct RegimeSpec {
  std::string name;
  double sigma_lo = 0.0;
  double sigma_hi = 0.0;

  bool contains(double sigma) const { return sigma >= sigma_lo && sigma <= sigma_hi; }
};

struct EvalConfig {
  std::size_t id_episodes = 120000;  // the very-hard bucket (1/6 of the range) gets ~20k
  std::size_t ood_episodes = 20000;
  std::size_t sweep_episodes = 20000;
  double hard_lo = 0.9;
  double very_hard_lo = 1.05;
  double ood_sigma_lo = 1.2;
  double ood_sigma_hi = 1.8;
  int ece_bins = 10;
  bool argmax = false;
  std::vector<double> sweep_sigmas = default_sweep_sigmas();

  static std::vector<double> default_sweep_sigmas();  // 0.3, 0.4, ..., 1.8
  void validate(const EnvConfig& train_env) const;
};

/// "mean" (whole training range), "hard" and "very_hard" sub-ranges.
std::vector<RegimeSpec> id_regimes(const EnvConfig& env, const EvalConfig& eval);
RegimeSpec ood_regime(const EvalConfig& eval);

struct RegimeResult {
  RegimeSpec regime;
  double mean_return = 0.0;
  double stderr_return = 0.0;
  double mean_latency = 0.0;
  std::size_t episodes = 0;
};

struct CommitRecord {
  double confidence = 0.5;  // max of the renormalized guess probabilities
  bool correct = false;     // the more likely guess equals z
};

struct EvalRun {
  std::vector<RegimeResult> regimes;
  std::vector<CommitRecord> commits;
  std::size_t episodes = 0;
};

/// Plays `episodes` fresh episodes on `env` and buckets each by its hidden
/// sigma into every regime that contains it.
EvalRun evaluate(const Policy& policy, const EnvConfig& env, std::span<const RegimeSpec> regimes,
                 std::size_t episodes, std::uint64_t seed, bool argmax = false, Exec exec = Exec::kParallel,
                 StreamDomain domain = StreamDomain::kEval);

/// Binary posterior over z from the two guess logits at the commit step.
CommitRecord commit_record(const EpisodeTrace& trace);

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
  std::size_t committed = 0;
  double committed_fraction = 0.0;
};

/// Equal-width bins over [0.5, 1]; ECE = sum_b (n_b / N) |acc_b - conf_b|.
/// Throws ContractViolation on an empty record set.
CalibrationReport ece(std::span<const CommitRecord> records, int n_bins, std::size_t total_episodes = 0);

struct SweepPoint {
  double sigma = 0.0;
  double mean_return = 0.0;
  double stderr_return = 0.0;
  double mean_latency = 0.0;
  std::size_t episodes = 0;
};

/// Evaluates at each fixed sigma (no per-episode resampling).
std::vector<SweepPoint> sigma_sweep(const Policy& policy, const EnvConfig& base, std::span<const double> sigmas,
                                    std::size_t episodes_per_sigma, std::uint64_t seed, bool argmax = false,
                                    Exec exec = Exec::kParallel);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct Dispersion {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across seeds (0 for one seed)
};
Dispersion across_seeds(std::span<const double> values);

/// Trained seeds of one variant, evaluated on the training and shifted ranges.
struct VariantResult {
  Variant variant = Variant::kBelief;
  std::vector<std::uint64_t> seeds;
  std::vector<EvalRun> id;    // one per seed
  std::vector<EvalRun> ood;   // one per seed
  std::vector<CalibrationReport> id_calibration;
  std::vector<CalibrationReport> ood_calibration;
  std::vector<std::vector<SweepPoint>> sweep;  // one curve per seed

  Dispersion id_return(const std::string& regime) const;
  Dispersion ood_return() const;
  Dispersion id_ece() const;
  Dispersion ood_ece() const;
  /// Seed-averaged sweep curve.
  std::vector<SweepPoint> mean_sweep() const;
};

/// Appends one seed's evaluation to `result`: the ID regimes always, the
/// shifted range and the sigma sweep on request.
void evaluate_seed(VariantResult& result, const Policy& policy, std::uint64_t seed, const EnvConfig& train_env,
                   const EvalConfig& eval, bool with_ood, bool with_sweep, Exec exec = Exec::kParallel);

/// Evaluates already trained seeds of one variant on both ranges and the sweep.
VariantResult ood_protocol(Variant variant, std::span<const Policy> seed_policies,
                           std::span<const std::uint64_t> seeds, const EnvConfig& train_env,
                           const EvalConfig& eval, Exec exec = Exec::kParallel);

// Report writers. Every file starts with '#' header lines carrying the config
// hash and seed list.
std::string regime_csv(const VariantResult& r, bool ood, const std::vector<std::string>& header);
std::string calibration_csv(const VariantResult& r, bool ood, const std::vector<std::string>& header);
std::string sweep_csv(std::span<const VariantResult> results, const std::vector<std::string>& header);
std::string markdown_report(std::span<const VariantResult> results, const EnvConfig& train_env,
                            const EvalConfig& eval, const std::vector<std::string>& header);

}  // namespace bsrl
