#include "bsrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>
#include <vector>

#include "bsrl/errors.hpp"
#include "bsrl/hashing.hpp"

namespace bsrl {

namespace {

constexpr const char* kFormat = "bsrl-checkpoint-v1";

std::string encode_blob(std::span<const double> values) {
  std::string blob(values.size() * sizeof(double), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (std::size_t b = 0; b < 8; ++b) {
      blob[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  return blob;
}

void decode_blob(std::string_view blob, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[i * 8 + b])) << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p += ".bin";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params, const CheckpointInfo& info) {
  const std::string blob = encode_blob(params.values());
  const auto blob_path = checkpoint_blob_path(path);
  write_file(blob_path, blob);

  std::ostringstream m;
  m << "format = " << kFormat << '\n';
  m << "config_hash = " << info.config_hash << '\n';
  m << "seed = " << info.seed << '\n';
  m << "param_count = " << params.size() << '\n';
  m << "blob = " << blob_path.filename().string() << '\n';
  m << "blob_sha256 = " << sha256_hex(blob) << '\n';
  for (const auto& [k, v] : info.meta) {
    m << "meta." << k << " = " << v << '\n';
  }
  for (const auto& e : params.layout().entries()) {
    m << "param = " << e.name << ' ' << e.slice.rows << ' ' << e.slice.cols << ' ' << e.slice.offset << '\n';
  }
  write_file(path, m.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw IntegrityError("checkpoint manifest missing: " + path.string());
  }
  std::istringstream in(read_file(path));
  std::string line;
  CheckpointInfo info;
  ParamLayout layout;
  std::string format, blob_name, blob_hash;
  std::size_t param_count = 0;
  bool have_count = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("malformed checkpoint manifest line: " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "format") {
      format = value;
    } else if (key == "config_hash") {
      info.config_hash = value;
    } else if (key == "seed") {
      info.seed = std::stoull(value);
    } else if (key == "param_count") {
      param_count = std::stoull(value);
      have_count = true;
    } else if (key == "blob") {
      blob_name = value;
    } else if (key == "blob_sha256") {
      blob_hash = value;
    } else if (key.rfind("meta.", 0) == 0) {
      info.meta[key.substr(5)] = value;
    } else if (key == "param") {
      std::istringstream ps(value);
      std::string name;
      std::size_t rows = 0, cols = 0, offset = 0;
      if (!(ps >> name >> rows >> cols >> offset)) {
        throw ConfigError("malformed param line: " + line);
      }
      const Slice s = layout.add(name, rows, cols);
      if (s.offset != offset) {
        throw IntegrityError("param '" + name + "' offset does not match contiguous layout");
      }
    } else {
      throw ConfigError("unknown checkpoint manifest key: " + key);
    }
  }
  if (format != kFormat) {
    throw ConfigError("unsupported checkpoint format '" + format + "'");
  }
  if (!have_count || param_count != layout.size()) {
    throw IntegrityError("checkpoint param_count does not match listed slices");
  }
  const auto blob_path = path.parent_path() / blob_name;
  if (!std::filesystem::exists(blob_path)) {
    throw IntegrityError("checkpoint blob missing: " + blob_path.string());
  }
  const std::string blob = read_file(blob_path);
  if (sha256_hex(blob) != blob_hash) {
    throw IntegrityError("checkpoint blob hash mismatch: " + blob_path.string());
  }
  if (blob.size() != param_count * sizeof(double)) {
    throw IntegrityError("checkpoint blob has the wrong size");
  }
  Checkpoint ck{ParamStore(std::move(layout)), std::move(info)};
  decode_blob(blob, ck.params.values());
  return ck;
}

}  // namespace bsrl
