#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bsrl/config.hpp"
#include "bsrl/eval.hpp"
#include "bsrl/selfcheck.hpp"

namespace bsrl {

inline constexpr const char* kSpecVersion = "1.0";

struct SeedRun {
  std::uint64_t seed = 0;
  std::string checkpoint;  // relative to the manifest directory
  std::string checkpoint_sha256;
  std::string metrics;
  std::string metrics_sha256;
  std::string snapshots;
  std::string snapshots_sha256;
  double wall_seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string spec_version = kSpecVersion;
  RunConfig config;
  std::vector<SeedRun> runs;
};

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest);
/// Parses the manifest; file hashes are not checked here.
RunManifest load_manifest(const std::filesystem::path& path);
/// Throws IntegrityError if a file of this seed is missing or its hash differs.
void verify_seed_run(const std::filesystem::path& manifest_dir, const SeedRun& run);

/// Trains every seed of `config` into config.output_dir.
RunManifest cmd_train(const RunConfig& config, std::ostream& log);

struct EvalOptions {
  bool ood = false;
  std::optional<std::size_t> episodes;  // replaces every eval episode count
  bool argmax = false;
  std::vector<std::string> overrides;   // eval.* keys only
  std::filesystem::path out;            // defaults to <manifest dir>/eval
};

struct SeedError {
  std::uint64_t seed = 0;
  std::string message;
};

struct EvalOutcome {
  std::optional<VariantResult> result;  // empty when every seed failed
  std::vector<SeedError> errors;
  std::filesystem::path out;
};

EvalOutcome cmd_eval(const std::filesystem::path& manifest_path, const EvalOptions& options, std::ostream& log);

struct SweepOptions {
  std::vector<double> sigmas = EvalConfig::default_sweep_sigmas();
  std::optional<std::size_t> episodes;
  bool argmax = false;
  std::filesystem::path out;  // defaults to <first manifest dir>/sweep.csv
};

struct SweepOutcome {
  std::vector<VariantResult> results;
  std::vector<SeedError> errors;
  std::filesystem::path csv;
};

SweepOutcome cmd_sweep(const std::vector<std::filesystem::path>& manifests, const SweepOptions& options,
                       std::ostream& log);

struct AblateFailure {
  Variant variant = Variant::kMlp;
  std::string message;
};

struct AblateOutcome {
  std::vector<VariantResult> results;
  std::vector<AblateFailure> failures;
  std::filesystem::path out;
};

inline constexpr std::array<Variant, 5> kAblationVariants{Variant::kMlp, Variant::kSummary, Variant::kBelief,
                                                          Variant::kBeliefGated, Variant::kBeliefPrivileged};

/// Trains and evaluates every ablation variant under `base` (variant field
/// ignored) into `out`/<variant>, then writes the combined tables.
AblateOutcome cmd_ablate(const RunConfig& base, const std::filesystem::path& out, std::ostream& log);

/// Re-renders report.md of an ablation or eval directory from results.json.
std::filesystem::path cmd_report(const std::filesystem::path& dir);

/// Returns the number of failing checks.
int cmd_check(const SelfCheckOptions& options, std::ostream& log);

// results.json round trip (per-seed regimes, calibration and sweep curves).
std::string results_json(std::span<const VariantResult> results, const RunConfig& config,
                         const std::vector<std::string>& header);
std::vector<VariantResult> parse_results_json(const std::string& text, RunConfig& config,
                                              std::vector<std::string>& header);

/// Full command-line entry point; returns the process exit code
/// (0 ok, 2 config error, 3 divergence, 4 integrity failure, 1 other).
int run_cli(int argc, const char* const* argv);

}  // namespace bsrl
