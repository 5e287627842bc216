#include "bsrl/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "bsrl/checkpoint.hpp"
#include "bsrl/errors.hpp"
#include "bsrl/hashing.hpp"
#include "bsrl/kernels.hpp"

namespace bsrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_json(const RunConfig& c) { return json::parse(dump_run_config(c)); }

std::string join_seeds(std::span<const std::uint64_t> seeds) {
  std::string s;
  for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? " " : "") + std::to_string(seeds[i]);
  return s;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<std::string> file_header(const std::string& hash, std::span<const std::uint64_t> seeds,
                                     const RunConfig& cfg) {
  const EvalConfig& e = cfg.eval;
  return {"config_hash=" + hash,
          "seeds=" + join_seeds(seeds),
          "spec_version=" + std::string(kSpecVersion),
          "regimes: hard=[" + fmt_double(e.hard_lo) + "," + fmt_double(cfg.train.env.sigma_hi) + "] very_hard=[" +
              fmt_double(e.very_hard_lo) + "," + fmt_double(cfg.train.env.sigma_hi) + "] ood=[" +
              fmt_double(e.ood_sigma_lo) + "," + fmt_double(e.ood_sigma_hi) + "]",
          "ece_bins=" + std::to_string(e.ece_bins) + " actions=" + (e.argmax ? "argmax" : "sampled")};
}

Policy policy_from_checkpoint(const Checkpoint& ck) {
  const auto get = [&](const std::string& key) -> std::string {
    auto it = ck.info.meta.find(key);
    if (it == ck.info.meta.end()) throw IntegrityError("checkpoint lacks meta." + key);
    return it->second;
  };
  AdapterConfig adapter;
  adapter.enabled = get("adapter_enabled") == "1";
  adapter.rank = static_cast<std::size_t>(std::stoul(get("adapter_rank")));
  return Policy(parse_variant(get("variant")), ck.params, adapter);
}

Policy load_seed_policy(const fs::path& dir, const RunManifest& m, const SeedRun& run, std::ostream& log) {
  verify_seed_run(dir, run);
  const Checkpoint ck = load_checkpoint(dir / run.checkpoint);
  if (ck.info.config_hash != m.config_hash) {
    log << "warning: checkpoint " << run.checkpoint << " was written under config " << ck.info.config_hash
        << ", manifest says " << m.config_hash << "\n";
  }
  return policy_from_checkpoint(ck);
}

void write_eval_files(const fs::path& out, const VariantResult& r, const RunConfig& cfg,
                      const std::vector<std::string>& header) {
  write_file(out / "regimes_id.csv", regime_csv(r, false, header));
  write_file(out / "calibration_id.csv", calibration_csv(r, false, header));
  if (!r.ood.empty()) {
    write_file(out / "regimes_ood.csv", regime_csv(r, true, header));
    write_file(out / "calibration_ood.csv", calibration_csv(r, true, header));
  }
  std::span<const VariantResult> one(&r, 1);
  if (!r.sweep.empty()) write_file(out / "sweep.csv", sweep_csv(one, header));
  write_file(out / "report.md", markdown_report(one, cfg.train.env, cfg.eval, header));
  write_file(out / "results.json", results_json(one, cfg, header));
}

std::string seeds_csv(Variant v, const VariantResult* r, const std::vector<SeedError>& errors,
                      const std::vector<std::string>& header) {
  std::ostringstream out;
  for (const auto& h : header) out << "# " << h << '\n';
  out << "variant,seed,status,id_mean_return,ood_mean_return,message\n";
  char buf[64];
  if (r != nullptr) {
    for (std::size_t i = 0; i < r->seeds.size(); ++i) {
      out << to_string(v) << ',' << r->seeds[i] << ",ok,";
      std::snprintf(buf, sizeof buf, "%.6f", r->id[i].regimes.front().mean_return);
      out << buf << ',';
      if (i < r->ood.size()) {
        std::snprintf(buf, sizeof buf, "%.6f", r->ood[i].regimes.front().mean_return);
        out << buf;
      }
      out << ",\n";
    }
  }
  for (const auto& e : errors) {
    std::string msg = e.message;
    for (char& ch : msg) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << to_string(v) << ',' << e.seed << ",error,,," << msg << '\n';
  }
  return out.str();
}

json regime_json(const RegimeResult& r) {
  return {{"name", r.regime.name},     {"sigma_lo", r.regime.sigma_lo},   {"sigma_hi", r.regime.sigma_hi},
          {"mean_return", r.mean_return}, {"stderr_return", r.stderr_return}, {"mean_latency", r.mean_latency},
          {"episodes", r.episodes}};
}

json run_json(const EvalRun& r) {
  json regimes = json::array();
  for (const auto& g : r.regimes) regimes.push_back(regime_json(g));
  return {{"episodes", r.episodes}, {"regimes", regimes}};
}

json calibration_json(const CalibrationReport& c) {
  json bins = json::array();
  for (const auto& b : c.bins) {
    bins.push_back({{"lo", b.lo},
                    {"hi", b.hi},
                    {"mean_confidence", b.mean_confidence},
                    {"accuracy", b.accuracy},
                    {"count", b.count}});
  }
  return {{"ece", c.ece}, {"committed", c.committed}, {"committed_fraction", c.committed_fraction}, {"bins", bins}};
}

json sweep_json(const std::vector<SweepPoint>& curve) {
  json pts = json::array();
  for (const auto& p : curve) {
    pts.push_back({{"sigma", p.sigma},
                   {"mean_return", p.mean_return},
                   {"stderr_return", p.stderr_return},
                   {"mean_latency", p.mean_latency},
                   {"episodes", p.episodes}});
  }
  return pts;
}

EvalRun run_from(const json& j) {
  EvalRun r;
  r.episodes = j.at("episodes").get<std::size_t>();
  for (const auto& g : j.at("regimes")) {
    RegimeResult x;
    x.regime = {g.at("name").get<std::string>(), g.at("sigma_lo").get<double>(), g.at("sigma_hi").get<double>()};
    x.mean_return = g.at("mean_return").get<double>();
    x.stderr_return = g.at("stderr_return").get<double>();
    x.mean_latency = g.at("mean_latency").get<double>();
    x.episodes = g.at("episodes").get<std::size_t>();
    r.regimes.push_back(x);
  }
  return r;
}

CalibrationReport calibration_from(const json& j) {
  CalibrationReport c;
  c.ece = j.at("ece").get<double>();
  c.committed = j.at("committed").get<std::size_t>();
  c.committed_fraction = j.at("committed_fraction").get<double>();
  for (const auto& b : j.at("bins")) {
    c.bins.push_back({b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("mean_confidence").get<double>(),
                      b.at("accuracy").get<double>(), b.at("count").get<std::size_t>()});
  }
  return c;
}

std::vector<SweepPoint> sweep_from(const json& j) {
  std::vector<SweepPoint> out;
  for (const auto& p : j) {
    out.push_back({p.at("sigma").get<double>(), p.at("mean_return").get<double>(), p.at("stderr_return").get<double>(),
                   p.at("mean_latency").get<double>(), p.at("episodes").get<std::size_t>()});
  }
  return out;
}

std::string summary_csv(std::span<const VariantResult> results, const std::vector<std::string>& header) {
  std::ostringstream out;
  for (const auto& h : header) out << "# " << h << '\n';
  out << "variant,seeds,id_mean,id_mean_std,id_hard,id_hard_std,id_very_hard,id_very_hard_std,ood_mean,ood_mean_std,"
         "id_ece,id_ece_std,ood_ece,ood_ece_std\n";
  char buf[64];
  const auto put = [&](const Dispersion& d) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f", d.mean, d.std);
    out << buf;
  };
  for (const auto& r : results) {
    out << to_string(r.variant) << ',' << r.seeds.size();
    put(r.id_return("mean"));
    put(r.id_return("hard"));
    put(r.id_return("very_hard"));
    put(r.ood_return());
    put(r.id_ece());
    put(r.ood_ece());
    out << '\n';
  }
  return out.str();
}

std::string progress_line(Variant v, std::uint64_t seed, const MetricsRow& m, int total) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s seed %llu step %d/%d return %.4f loss %.4f\n", std::string(to_string(v)).c_str(),
                static_cast<unsigned long long>(seed), m.step, total, m.mean_return, m.loss.total);
  return buf;
}

}  // namespace

void save_manifest(const fs::path& path, const RunManifest& m) {
  json runs = json::array();
  for (const auto& r : m.runs) {
    runs.push_back({{"seed", r.seed},
                    {"checkpoint", r.checkpoint},
                    {"checkpoint_sha256", r.checkpoint_sha256},
                    {"metrics", r.metrics},
                    {"metrics_sha256", r.metrics_sha256},
                    {"snapshots", r.snapshots},
                    {"snapshots_sha256", r.snapshots_sha256},
                    {"wall_seconds", r.wall_seconds}});
  }
  json j = {{"format", "bsrl-run-manifest"},
            {"spec_version", m.spec_version},
            {"config_hash", m.config_hash},
            {"config", config_json(m.config)},
            {"runs", runs}};
  write_file(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw IntegrityError("manifest not found: " + path.string());
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IntegrityError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "bsrl-run-manifest") {
      throw IntegrityError("manifest " + path.string() + " has an unknown format");
    }
    RunManifest m;
    m.spec_version = j.at("spec_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.config = parse_run_config(j.at("config").dump());
    if (config_hash(m.config) != m.config_hash) {
      throw IntegrityError("manifest config does not match its recorded hash");
    }
    for (const auto& r : j.at("runs")) {
      SeedRun s;
      s.seed = r.at("seed").get<std::uint64_t>();
      s.checkpoint = r.at("checkpoint").get<std::string>();
      s.checkpoint_sha256 = r.at("checkpoint_sha256").get<std::string>();
      s.metrics = r.at("metrics").get<std::string>();
      s.metrics_sha256 = r.at("metrics_sha256").get<std::string>();
      s.snapshots = r.at("snapshots").get<std::string>();
      s.snapshots_sha256 = r.at("snapshots_sha256").get<std::string>();
      s.wall_seconds = r.at("wall_seconds").get<double>();
      m.runs.push_back(s);
    }
    return m;
  } catch (const json::exception& e) {
    throw IntegrityError("manifest " + path.string() + " is malformed: " + e.what());
  }
}

void verify_seed_run(const fs::path& dir, const SeedRun& run) {
  const std::pair<const std::string*, const std::string*> files[] = {
      {&run.checkpoint, &run.checkpoint_sha256}, {&run.metrics, &run.metrics_sha256},
      {&run.snapshots, &run.snapshots_sha256}};
  for (const auto& [rel, hash] : files) {
    const fs::path p = dir / *rel;
    if (!fs::exists(p)) throw IntegrityError("missing " + p.string());
    if (sha256_file(p) != *hash) {
      throw IntegrityError("hash mismatch for " + p.string());
    }
  }
}

RunManifest cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const fs::path dir = cfg.output_dir;
  const std::string hash = config_hash(cfg);
  write_file(dir / "config.json", dump_run_config(cfg));
  RunManifest m;
  m.config_hash = hash;
  m.config = cfg;
  const std::string variant(to_string(cfg.train.variant));
  for (std::uint64_t seed : cfg.train.seeds) {
    const std::string rel = "seed_" + std::to_string(seed);
    const std::vector<std::string> header{"config_hash=" + hash, "variant=" + variant, "seed=" + std::to_string(seed),
                                          "spec_version=" + std::string(kSpecVersion)};
    const auto t0 = std::chrono::steady_clock::now();
    const int every = std::max(1, cfg.train.opt_steps / 8);
    const auto progress = [&](const MetricsRow& row) {
      if (row.step % every == 0 || row.step + 1 == cfg.train.opt_steps) {
        log << progress_line(cfg.train.variant, seed, row, cfg.train.opt_steps) << std::flush;
      }
    };
    std::optional<TrainResult> result;
    try {
      result.emplace(train_run(cfg.train, seed, Exec::kParallel, progress));
    } catch (const DivergenceError& e) {
      write_file(dir / rel / "divergence.txt",
                 std::string(e.what()) + "\n\nconfig_hash=" + hash + "\n" + dump_run_config(cfg));
      throw;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    SeedRun run;
    run.seed = seed;
    run.checkpoint = rel + "/policy.ckpt";
    run.metrics = rel + "/metrics.csv";
    run.snapshots = rel + "/snapshots.csv";
    const AdapterConfig& ad = cfg.train.adapter;
    save_checkpoint(dir / run.checkpoint, result->policy.params(),
                    {hash,
                     seed,
                     {{"variant", variant},
                      {"adapter_enabled", ad.enabled ? "1" : "0"},
                      {"adapter_rank", std::to_string(ad.rank)}}});
    write_file(dir / run.metrics, metrics_csv(result->metrics, header));
    write_file(dir / run.snapshots, snapshots_csv(result->snapshots, header));
    run.checkpoint_sha256 = sha256_file(dir / run.checkpoint);
    run.metrics_sha256 = sha256_file(dir / run.metrics);
    run.snapshots_sha256 = sha256_file(dir / run.snapshots);
    run.wall_seconds = secs;
    m.runs.push_back(run);
  }
  save_manifest(dir / "manifest.json", m);
  return m;
}

EvalOutcome cmd_eval(const fs::path& manifest_path, const EvalOptions& opt, std::ostream& log) {
  const RunManifest m = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  for (const auto& o : opt.overrides) {
    if (o.rfind("eval.", 0) != 0) throw ConfigError("eval accepts only eval.* overrides, got '" + o + "'");
  }
  RunConfig cfg = apply_overrides(m.config, opt.overrides);
  if (opt.episodes) {
    cfg.eval.id_episodes = cfg.eval.ood_episodes = cfg.eval.sweep_episodes = *opt.episodes;
  }
  if (opt.argmax) cfg.eval.argmax = true;
  cfg.validate();

  EvalOutcome outcome;
  outcome.out = opt.out.empty() ? dir / "eval" : opt.out;
  VariantResult res;
  res.variant = cfg.train.variant;
  for (const SeedRun& run : m.runs) {
    try {
      const Policy p = load_seed_policy(dir, m, run, log);
      evaluate_seed(res, p, run.seed, cfg.train.env, cfg.eval, opt.ood, false);
      log << to_string(res.variant) << " seed " << run.seed << " evaluated\n";
    } catch (const std::runtime_error& e) {
      outcome.errors.push_back({run.seed, e.what()});
      log << "error: seed " << run.seed << ": " << e.what() << "\n";
    }
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& r : m.runs) seeds.push_back(r.seed);
  const auto header = file_header(m.config_hash, seeds, cfg);
  write_file(outcome.out / "seeds.csv", seeds_csv(res.variant, res.seeds.empty() ? nullptr : &res, outcome.errors,
                                                   header));
  if (!res.seeds.empty()) {
    write_eval_files(outcome.out, res, cfg, header);
    outcome.result = std::move(res);
  }
  return outcome;
}

SweepOutcome cmd_sweep(const std::vector<fs::path>& manifests, const SweepOptions& opt, std::ostream& log) {
  if (manifests.empty()) throw ConfigError("sweep needs at least one manifest");
  if (opt.sigmas.empty()) throw ConfigError("--sigmas must not be empty");
  for (double s : opt.sigmas) {
    if (!(s > 0.0)) throw ConfigError("--sigmas entries must be > 0");
  }
  SweepOutcome outcome;
  std::vector<std::string> header{"spec_version=" + std::string(kSpecVersion)};
  for (const fs::path& path : manifests) {
    const RunManifest m = load_manifest(path);
    RunConfig cfg = m.config;
    cfg.eval.sweep_sigmas = opt.sigmas;
    if (opt.episodes) cfg.eval.sweep_episodes = *opt.episodes;
    if (opt.argmax) cfg.eval.argmax = true;
    VariantResult res;
    res.variant = cfg.train.variant;
    std::vector<std::uint64_t> seeds;
    for (const SeedRun& run : m.runs) {
      seeds.push_back(run.seed);
      try {
        const Policy p = load_seed_policy(path.parent_path(), m, run, log);
        res.sweep.push_back(sigma_sweep(p, cfg.train.env, cfg.eval.sweep_sigmas, cfg.eval.sweep_episodes, run.seed,
                                        cfg.eval.argmax));
        res.seeds.push_back(run.seed);
      } catch (const std::runtime_error& e) {
        outcome.errors.push_back({run.seed, std::string(to_string(res.variant)) + ": " + e.what()});
        log << "error: " << to_string(res.variant) << " seed " << run.seed << ": " << e.what() << "\n";
      }
    }
    header.push_back(std::string(to_string(res.variant)) + ": config_hash=" + m.config_hash +
                     " seeds=" + join_seeds(seeds) + " actions=" + (cfg.eval.argmax ? "argmax" : "sampled"));
    if (!res.seeds.empty()) outcome.results.push_back(std::move(res));
  }
  outcome.csv = opt.out.empty() ? manifests.front().parent_path() / "sweep.csv" : opt.out;
  write_file(outcome.csv, sweep_csv(outcome.results, header));
  return outcome;
}

AblateOutcome cmd_ablate(const RunConfig& base, const fs::path& out, std::ostream& log) {
  base.validate();
  AblateOutcome outcome;
  outcome.out = out;
  const std::string suite_hash = config_hash(base);
  json variants = json::array();
  for (Variant v : kAblationVariants) {
    RunConfig cfg = base;
    cfg.train.variant = v;
    if (!has_belief(v)) cfg.train.adapter.enabled = false;
    cfg.output_dir = (out / std::string(to_string(v))).string();
    json entry = {{"variant", std::string(to_string(v))}, {"dir", std::string(to_string(v))}};
    try {
      cfg.validate();
      const RunManifest m = cmd_train(cfg, log);
      const fs::path dir = cfg.output_dir;
      VariantResult res;
      res.variant = v;
      for (const SeedRun& run : m.runs) {
        const Policy p = load_seed_policy(dir, m, run, log);
        evaluate_seed(res, p, run.seed, cfg.train.env, cfg.eval, true, true);
      }
      write_eval_files(dir / "eval", res, cfg, file_header(m.config_hash, cfg.train.seeds, cfg));
      entry["status"] = "ok";
      entry["config_hash"] = m.config_hash;
      entry["manifest"] = std::string(to_string(v)) + "/manifest.json";
      outcome.results.push_back(std::move(res));
    } catch (const std::runtime_error& e) {
      log << "error: " << to_string(v) << ": " << e.what() << "\n";
      entry["status"] = "failed";
      entry["message"] = e.what();
      outcome.failures.push_back({v, e.what()});
    }
    variants.push_back(entry);
  }
  const auto header = file_header(suite_hash, base.train.seeds, base);
  write_file(out / "report.md", markdown_report(outcome.results, base.train.env, base.eval, header));
  write_file(out / "summary.csv", summary_csv(outcome.results, header));
  write_file(out / "sweep.csv", sweep_csv(outcome.results, header));
  write_file(out / "results.json", results_json(outcome.results, base, header));
  json suite = {{"format", "bsrl-suite-manifest"},
                {"spec_version", kSpecVersion},
                {"config_hash", suite_hash},
                {"config", config_json(base)},
                {"variants", variants}};
  write_file(out / "suite.json", suite.dump(2) + "\n");
  return outcome;
}

fs::path cmd_report(const fs::path& dir) {
  const fs::path src = dir / "results.json";
  if (!fs::exists(src)) throw IntegrityError("no results.json in " + dir.string());
  RunConfig cfg;
  std::vector<std::string> header;
  const auto results = parse_results_json(read_file(src), cfg, header);
  const fs::path md = dir / "report.md";
  write_file(md, markdown_report(results, cfg.train.env, cfg.eval, header));
  return md;
}

int cmd_check(const SelfCheckOptions& options, std::ostream& log) {
  int failures = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (const CheckResult& r : run_selfcheck(options)) {
    log << format_check(r) << "\n" << std::flush;
    failures += r.passed ? 0 : 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << " in "
      << fmt_double(secs) << " s\n";
  return failures;
}

std::string results_json(std::span<const VariantResult> results, const RunConfig& cfg,
                         const std::vector<std::string>& header) {
  json vs = json::array();
  for (const auto& r : results) {
    json v = {{"variant", std::string(to_string(r.variant))}, {"seeds", r.seeds}};
    v["id"] = json::array();
    v["ood"] = json::array();
    v["id_calibration"] = json::array();
    v["ood_calibration"] = json::array();
    v["sweep"] = json::array();
    for (const auto& x : r.id) v["id"].push_back(run_json(x));
    for (const auto& x : r.ood) v["ood"].push_back(run_json(x));
    for (const auto& x : r.id_calibration) v["id_calibration"].push_back(calibration_json(x));
    for (const auto& x : r.ood_calibration) v["ood_calibration"].push_back(calibration_json(x));
    for (const auto& x : r.sweep) v["sweep"].push_back(sweep_json(x));
    vs.push_back(v);
  }
  json j = {{"format", "bsrl-results"}, {"header", header}, {"config", config_json(cfg)}, {"variants", vs}};
  return j.dump(2) + "\n";
}

std::vector<VariantResult> parse_results_json(const std::string& text, RunConfig& cfg,
                                              std::vector<std::string>& header) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "bsrl-results") throw IntegrityError("not a results file");
    header = j.at("header").get<std::vector<std::string>>();
    cfg = parse_run_config(j.at("config").dump());
    std::vector<VariantResult> out;
    for (const auto& v : j.at("variants")) {
      VariantResult r;
      r.variant = parse_variant(v.at("variant").get<std::string>());
      r.seeds = v.at("seeds").get<std::vector<std::uint64_t>>();
      for (const auto& x : v.at("id")) r.id.push_back(run_from(x));
      for (const auto& x : v.at("ood")) r.ood.push_back(run_from(x));
      for (const auto& x : v.at("id_calibration")) r.id_calibration.push_back(calibration_from(x));
      for (const auto& x : v.at("ood_calibration")) r.ood_calibration.push_back(calibration_from(x));
      for (const auto& x : v.at("sweep")) r.sweep.push_back(sweep_from(x));
      out.push_back(std::move(r));
    }
    return out;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("malformed results.json: ") + e.what());
  }
}

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string variant;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  cfg = apply_overrides(cfg, f.sets);
  if (!f.variant.empty()) cfg.train.variant = parse_variant(f.variant);
  if (!f.seeds.empty()) cfg.train.seeds = f.seeds;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (!has_belief(cfg.train.variant) && cfg.train.adapter.enabled) {
    throw ConfigError("adapter.enabled: the " + std::string(to_string(cfg.train.variant)) +
                      " variant has no belief state to adapt");
  }
  cfg.validate();
  return cfg;
}

std::vector<double> parse_sigmas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("--sigmas: '" + tok + "' is not a number");
    }
  }
  return out;
}

void apply_thread_env() {
  if (const char* env = std::getenv("BSRL_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) throw ConfigError("BSRL_THREADS must be a positive integer");
    kernels::set_threads(static_cast<int>(n));
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Belief-state recurrent RL lab on the hidden-noise stop-or-guess task"};
  app.require_subcommand(1);

  CommonFlags train_f;
  auto* train = app.add_subcommand("train", "train every seed of a config and write a run manifest");
  train->add_option("--config", train_f.config, "JSON run config (defaults when omitted)");
  train->add_option("--seed", train_f.seeds, "seed(s), replaces the config seed list");
  train->add_option("--out", train_f.out, "output directory");
  train->add_option("--variant", train_f.variant, "mlp|summary|belief|belief_gated|belief_privileged|rwkv_belief");
  train->add_option("--set", train_f.sets, "override, e.g. train.opt_steps=1");

  std::string eval_manifest, eval_out;
  EvalOptions eval_opt;
  std::size_t eval_episodes = 0;
  auto* eval = app.add_subcommand("eval", "evaluate the checkpoints of a run manifest");
  eval->add_option("manifest", eval_manifest, "manifest.json written by train")->required();
  eval->add_flag("--ood", eval_opt.ood, "also evaluate on the shifted noise range");
  eval->add_option("--episodes", eval_episodes, "episodes per evaluation (replaces the config counts)");
  eval->add_flag("--argmax", eval_opt.argmax, "greedy actions instead of sampling");
  eval->add_option("--out", eval_out, "output directory (default <run>/eval)");
  eval->add_option("--set", eval_opt.overrides, "eval.* override, e.g. eval.hard_lo=0.95");

  CommonFlags ablate_f;
  std::size_t ablate_episodes = 0;
  bool ablate_argmax = false;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the five ablation variants");
  ablate->add_option("--config", ablate_f.config, "JSON run config (variant is ignored)");
  ablate->add_option("--seed", ablate_f.seeds, "seed(s)");
  ablate->add_option("--out", ablate_f.out, "suite directory")->required();
  ablate->add_option("--episodes", ablate_episodes, "episodes per evaluation");
  ablate->add_flag("--argmax", ablate_argmax, "greedy actions instead of sampling");
  ablate->add_option("--set", ablate_f.sets, "config override");

  std::vector<std::string> sweep_manifests;
  std::string sweep_sigmas, sweep_out;
  std::size_t sweep_episodes = 0;
  bool sweep_argmax = false;
  auto* sweep = app.add_subcommand("sweep", "fixed-sigma robustness sweep over one or more run manifests");
  sweep->add_option("manifests", sweep_manifests, "manifest.json files")->required();
  sweep->add_option("--sigmas", sweep_sigmas, "comma-separated sigma list (default 0.3..1.8 step 0.1)");
  sweep->add_option("--episodes", sweep_episodes, "episodes per sigma and seed");
  sweep->add_flag("--argmax", sweep_argmax, "greedy actions instead of sampling");
  sweep->add_option("--out", sweep_out, "CSV path (default <first run>/sweep.csv)");

  SelfCheckOptions check_opt;
  std::string fault;
  auto* check = app.add_subcommand("check", "gradient, oracle, stability, calibration and determinism self-test");
  check->add_option("--seed", check_opt.seed, "seed for the probes");
  check->add_option("--inject-fault", fault, "")->group("");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-render report.md from results.json");
  report->add_option("dir", report_dir, "ablation or eval output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    apply_thread_env();
    if (*train) {
      const RunConfig cfg = resolve_config(train_f);
      cmd_train(cfg, std::cerr);
      std::cout << (fs::path(cfg.output_dir) / "manifest.json").string() << "\n";
      return 0;
    }
    if (*eval) {
      if (eval_episodes > 0) eval_opt.episodes = eval_episodes;
      eval_opt.out = eval_out;
      const EvalOutcome o = cmd_eval(eval_manifest, eval_opt, std::cerr);
      std::cout << (o.out / "report.md").string() << "\n";
      return o.errors.empty() ? 0 : 4;
    }
    if (*ablate) {
      if (!ablate_f.variant.empty()) throw ConfigError("ablate runs every variant; drop --variant");
      RunConfig cfg = resolve_config(ablate_f);
      if (ablate_episodes > 0) cfg.eval.id_episodes = cfg.eval.ood_episodes = cfg.eval.sweep_episodes = ablate_episodes;
      if (ablate_argmax) cfg.eval.argmax = true;
      const AblateOutcome o = cmd_ablate(cfg, ablate_f.out, std::cerr);
      std::cout << (o.out / "report.md").string() << "\n";
      return o.failures.empty() ? 0 : 1;
    }
    if (*sweep) {
      SweepOptions so;
      if (!sweep_sigmas.empty()) so.sigmas = parse_sigmas(sweep_sigmas);
      if (sweep_episodes > 0) so.episodes = sweep_episodes;
      so.argmax = sweep_argmax;
      so.out = sweep_out;
      std::vector<fs::path> paths(sweep_manifests.begin(), sweep_manifests.end());
      const SweepOutcome o = cmd_sweep(paths, so, std::cerr);
      std::cout << o.csv.string() << "\n";
      return o.errors.empty() ? 0 : 4;
    }
    if (*check) {
      if (fault == "gradient") {
        check_opt.fault = InjectedFault::kGradient;
      } else if (!fault.empty()) {
        throw ConfigError("unknown fault '" + fault + "'");
      }
      return cmd_check(check_opt, std::cout) == 0 ? 0 : 1;
    }
    if (*report) {
      std::cout << cmd_report(report_dir).string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace bsrl
