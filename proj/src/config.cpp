#include "bsrl/config.hpp"

#include <algorithm>
#include <cstdint>
#include <type_traits>

#include <json.hpp>

#include "bsrl/errors.hpp"
#include "bsrl/hashing.hpp"

namespace bsrl {

using nlohmann::json;

namespace {

// Reads keys of one JSON object, rejecting unknown ones.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where("") + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!it->is_number_integer()) throw ConfigError(where(key) + ": expected an integer, got " + it->dump());
      if constexpr (std::is_unsigned_v<T>) {
        if (it->get<std::int64_t>() < 0) throw ConfigError(where(key) + ": must be >= 0, got " + it->dump());
      }
    }
    if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!it->is_array()) throw ConfigError(where(key) + ": expected a list of integers");
      for (const auto& v : *it) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
          throw ConfigError(where(key) + ": entries must be non-negative integers, got " + v.dump());
        }
      }
    }
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type (" + it->dump() + ")");
    }
  }

  const json* child(const char* key) {
    seen_.push_back(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError("unknown field '" + where(it.key()) + "'");
      }
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string> seen_;
};

json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  json env = {{"sigma_lo", t.env.sigma_lo},         {"sigma_hi", t.env.sigma_hi},
              {"max_steps", t.env.max_steps},       {"wait_penalty", t.env.wait_penalty},
              {"correct_reward", t.env.correct_reward}, {"incorrect_reward", t.env.incorrect_reward}};
  json train = {{"opt_steps", t.opt_steps},
                {"batch_episodes", t.batch_episodes},
                {"seq_len", t.seq_len},
                {"gamma", t.gamma},
                {"c_v", t.loss.c_v},
                {"c_e", t.loss.c_e},
                {"beta_mu", t.loss.beta_mu},
                {"beta_sigma", t.loss.beta_sigma},
                {"broadcast_targets", t.loss.broadcast_targets},
                {"target_variance_floor", t.loss.target_variance_floor},
                {"ppo_clip", t.loss.ppo_clip},
                {"update_epochs", t.update_epochs},
                {"lr", t.adam.lr},
                {"adam_beta1", t.adam.beta1},
                {"adam_beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps},
                {"snapshot_every", t.snapshot_every},
                {"snapshot_episodes", t.snapshot_episodes}};
  json adapter = {{"enabled", t.adapter.enabled}, {"rank", t.adapter.rank}};
  const EvalConfig& e = c.eval;
  json eval = {{"id_episodes", e.id_episodes},   {"ood_episodes", e.ood_episodes},
               {"sweep_episodes", e.sweep_episodes}, {"hard_lo", e.hard_lo},
               {"very_hard_lo", e.very_hard_lo}, {"ood_sigma_lo", e.ood_sigma_lo},
               {"ood_sigma_hi", e.ood_sigma_hi}, {"ece_bins", e.ece_bins},
               {"argmax", e.argmax},             {"sweep_sigmas", e.sweep_sigmas}};
  return {{"schema_version", kConfigSchemaVersion},
          {"variant", std::string(to_string(t.variant))},
          {"seeds", t.seeds},
          {"output_dir", c.output_dir},
          {"env", env},
          {"train", train},
          {"adapter", adapter},
          {"eval", eval}};
}

RunConfig from_json(const json& doc) {
  RunConfig c;
  Reader top(doc, "");
  int version = -1;
  top.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                      std::to_string(version));
  }
  std::string variant = std::string(to_string(c.train.variant));
  top.get("variant", variant);
  c.train.variant = parse_variant(variant);
  top.get("seeds", c.train.seeds);
  top.get("output_dir", c.output_dir);

  if (const json* j = top.child("env")) {
    Reader r(*j, "env");
    EnvConfig& e = c.train.env;
    r.get("sigma_lo", e.sigma_lo);
    r.get("sigma_hi", e.sigma_hi);
    r.get("max_steps", e.max_steps);
    r.get("wait_penalty", e.wait_penalty);
    r.get("correct_reward", e.correct_reward);
    r.get("incorrect_reward", e.incorrect_reward);
    r.finish();
  }
  if (const json* j = top.child("train")) {
    Reader r(*j, "train");
    TrainConfig& t = c.train;
    r.get("opt_steps", t.opt_steps);
    r.get("batch_episodes", t.batch_episodes);
    r.get("seq_len", t.seq_len);
    r.get("gamma", t.gamma);
    r.get("c_v", t.loss.c_v);
    r.get("c_e", t.loss.c_e);
    r.get("beta_mu", t.loss.beta_mu);
    r.get("beta_sigma", t.loss.beta_sigma);
    r.get("broadcast_targets", t.loss.broadcast_targets);
    r.get("target_variance_floor", t.loss.target_variance_floor);
    r.get("ppo_clip", t.loss.ppo_clip);
    r.get("update_epochs", t.update_epochs);
    r.get("lr", t.adam.lr);
    r.get("adam_beta1", t.adam.beta1);
    r.get("adam_beta2", t.adam.beta2);
    r.get("adam_eps", t.adam.eps);
    r.get("snapshot_every", t.snapshot_every);
    r.get("snapshot_episodes", t.snapshot_episodes);
    r.finish();
  }
  if (const json* j = top.child("adapter")) {
    Reader r(*j, "adapter");
    r.get("enabled", c.train.adapter.enabled);
    r.get("rank", c.train.adapter.rank);
    r.finish();
  }
  if (const json* j = top.child("eval")) {
    Reader r(*j, "eval");
    EvalConfig& e = c.eval;
    r.get("id_episodes", e.id_episodes);
    r.get("ood_episodes", e.ood_episodes);
    r.get("sweep_episodes", e.sweep_episodes);
    r.get("hard_lo", e.hard_lo);
    r.get("very_hard_lo", e.very_hard_lo);
    r.get("ood_sigma_lo", e.ood_sigma_lo);
    r.get("ood_sigma_hi", e.ood_sigma_hi);
    r.get("ece_bins", e.ece_bins);
    r.get("argmax", e.argmax);
    r.get("sweep_sigmas", e.sweep_sigmas);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  train.validate();
  eval.validate(train.env);
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (eval.ood_sigma_lo < train.env.sigma_hi) {
    throw ConfigError("eval.ood_sigma_lo must not lie below env.sigma_hi (shifted range sits above training)");
  }
}

RunConfig parse_run_config(const std::string& text) { return from_json(parse_json(text)); }

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_run_config(read_file(path));
}

std::string dump_run_config(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
  json j = to_json(config);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json::json_pointer ptr("/" + [&] {
      std::string p = key;
      for (char& ch : p) {
        if (ch == '.') ch = '/';
      }
      return p;
    }());
    // Only existing leaves may be overridden; anything else is a typo.
    if (!j.contains(ptr)) throw ConfigError("unknown field '" + key + "'");
    j[ptr] = value;
  }
  return from_json(j);
}

}  // namespace bsrl
