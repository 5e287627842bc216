#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bsrl/eval.hpp"
#include "bsrl/train.hpp"

namespace bsrl {

inline constexpr int kConfigSchemaVersion = 1;

/// Everything needed to reproduce a run. Stored as JSON with a versioned
/// schema; unknown keys are rejected.
struct RunConfig {
  TrainConfig train;  // carries env, variant, adapter and the seed list
  EvalConfig eval;
  std::string output_dir = "runs/default";

  /// Throws ConfigError with the offending field path.
  void validate() const;
};

/// Parses a JSON document. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON (sorted keys, round-trip doubles, two-space indent).
std::string dump_run_config(const RunConfig& config);

/// SHA-256 of the canonical JSON with output_dir removed, so the same
/// experiment written to another directory keeps its hash.
std::string config_hash(const RunConfig& config);

/// Applies `path.to.key=value` overrides to the JSON form and re-parses.
/// The value is read as JSON when it parses, otherwise as a string.
RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides);

}  // namespace bsrl
