#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "bsrl/param_store.hpp"

namespace bsrl {

struct CheckpointInfo {
  std::string config_hash;
  std::uint64_t seed = 0;
  // Free-form key/value pairs the owner needs to rebuild the model.
  std::map<std::string, std::string> meta;
};

struct Checkpoint {
  ParamStore params;
  CheckpointInfo info;
};

/// Writes `<path>` (plain-text `key = value` manifest listing every slice
/// by name, shape and offset) and `<path>.bin` (little-endian float64 blob of
/// the flat parameter vector). The manifest records the blob's SHA-256.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const CheckpointInfo& info);

/// Throws IntegrityError if the blob is missing, has the wrong size, or does
/// not match the recorded hash; ConfigError if the manifest is malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest_path);

}  // namespace bsrl
