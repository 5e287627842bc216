#include "bsrl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "bsrl/errors.hpp"
#include "bsrl/layers.hpp"

namespace bsrl {

std::vector<double> EvalConfig::default_sweep_sigmas() {
  std::vector<double> s;
  for (int i = 3; i <= 18; ++i) s.push_back(i / 10.0);
  return s;
}

void EvalConfig::validate(const EnvConfig& env) const {
  if (id_episodes < 1 || ood_episodes < 1 || sweep_episodes < 1) {
    throw ConfigError("eval episode counts must be >= 1");
  }
  if (!(hard_lo >= env.sigma_lo && hard_lo <= env.sigma_hi)) {
    throw ConfigError("eval.hard_lo must lie inside the training sigma range");
  }
  if (!(very_hard_lo >= hard_lo && very_hard_lo <= env.sigma_hi)) {
    throw ConfigError("eval.very_hard_lo must lie in [eval.hard_lo, env.sigma_hi]");
  }
  if (!(ood_sigma_lo > 0.0 && ood_sigma_hi >= ood_sigma_lo)) {
    throw ConfigError("eval OOD range must satisfy 0 < ood_sigma_lo <= ood_sigma_hi");
  }
  if (ece_bins < 1) throw ConfigError("eval.ece_bins must be >= 1");
  if (sweep_sigmas.empty()) throw ConfigError("eval.sweep_sigmas must not be empty");
  for (double s : sweep_sigmas) {
    if (!(s > 0.0)) throw ConfigError("eval.sweep_sigmas entries must be > 0");
  }
}

std::vector<RegimeSpec> id_regimes(const EnvConfig& env, const EvalConfig& eval) {
  return {{"mean", env.sigma_lo, env.sigma_hi},
          {"hard", eval.hard_lo, env.sigma_hi},
          {"very_hard", eval.very_hard_lo, env.sigma_hi}};
}

RegimeSpec ood_regime(const EvalConfig& eval) { return {"ood", eval.ood_sigma_lo, eval.ood_sigma_hi}; }

CommitRecord commit_record(const EpisodeTrace& tr) {
  if (!tr.commit_step) {
    throw ContractViolation("commit_record on an episode that never committed");
  }
  // p(z = +1) = softmax over the two guess logits.
  const double d = tr.commit_guess_logits[0] - tr.commit_guess_logits[1];
  const double p_pos = 1.0 / (1.0 + std::exp(-d));
  const bool predict_pos = p_pos >= 0.5;
  return {predict_pos ? p_pos : 1.0 - p_pos, (predict_pos ? 1 : -1) == tr.z};
}

namespace {

struct Accumulator {
  double sum = 0.0;
  double sum_sq = 0.0;
  double latency = 0.0;
  std::size_t n = 0;

  void add(double r, double lat) {
    sum += r;
    sum_sq += r * r;
    latency += lat;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stderr_() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
    return std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
};

}  // namespace

EvalRun evaluate(const Policy& policy, const EnvConfig& env, std::span<const RegimeSpec> regimes,
                 std::size_t episodes, std::uint64_t seed, bool argmax, Exec exec, StreamDomain domain) {
  if (episodes < 1) throw ContractViolation("evaluate needs at least one episode");
  RolloutRequest req;
  req.episodes = episodes;
  req.seed = seed;
  req.domain = domain;
  req.argmax = argmax;
  const Rollout r = collect_rollouts(policy, env, req, exec);

  std::vector<Accumulator> acc(regimes.size());
  EvalRun run;
  run.episodes = episodes;
  for (const EpisodeTrace& tr : r.episodes) {
    for (std::size_t k = 0; k < regimes.size(); ++k) {
      if (regimes[k].contains(tr.sigma)) {
        acc[k].add(tr.total_return, tr.latency(env.max_steps));
      }
    }
    if (tr.commit_step) run.commits.push_back(commit_record(tr));
  }
  for (std::size_t k = 0; k < regimes.size(); ++k) {
    const double n = static_cast<double>(std::max<std::size_t>(acc[k].n, 1));
    run.regimes.push_back({regimes[k], acc[k].mean(), acc[k].stderr_(), acc[k].latency / n, acc[k].n});
  }
  return run;
}

CalibrationReport ece(std::span<const CommitRecord> records, int n_bins, std::size_t total_episodes) {
  if (records.empty()) {
    throw ContractViolation("ECE is undefined without committed episodes");
  }
  if (n_bins < 1) throw ContractViolation("ECE needs at least one bin");
  CalibrationReport rep;
  const double width = 0.5 / n_bins;
  rep.bins.resize(static_cast<std::size_t>(n_bins));
  std::vector<double> conf(rep.bins.size(), 0.0), hits(rep.bins.size(), 0.0);
  for (int b = 0; b < n_bins; ++b) {
    rep.bins[static_cast<std::size_t>(b)].lo = 0.5 + b * width;
    rep.bins[static_cast<std::size_t>(b)].hi = 0.5 + (b + 1) * width;
  }
  for (const CommitRecord& r : records) {
    if (!(r.confidence >= 0.5 && r.confidence <= 1.0)) {
      throw ContractViolation("commit confidence must lie in [0.5, 1]");
    }
    auto b = static_cast<std::size_t>((r.confidence - 0.5) / width);
    b = std::min(b, rep.bins.size() - 1);
    ++rep.bins[b].count;
    conf[b] += r.confidence;
    hits[b] += r.correct ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(records.size());
  for (std::size_t b = 0; b < rep.bins.size(); ++b) {
    CalibrationBin& bin = rep.bins[b];
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.mean_confidence = conf[b] / c;
    bin.accuracy = hits[b] / c;
    rep.ece += (c / n) * std::abs(bin.accuracy - bin.mean_confidence);
  }
  rep.committed = records.size();
  rep.committed_fraction = total_episodes ? n / static_cast<double>(total_episodes) : 1.0;
  return rep;
}

std::vector<SweepPoint> sigma_sweep(const Policy& policy, const EnvConfig& base, std::span<const double> sigmas,
                                    std::size_t episodes_per_sigma, std::uint64_t seed, bool argmax, Exec exec) {
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (!(sigmas[i] > 0.0)) throw ConfigError("sweep sigma must be > 0");
    EnvConfig env = base;
    env.sigma_lo = env.sigma_hi = sigmas[i];
    const RegimeSpec all{"fixed", sigmas[i], sigmas[i]};
    // Each sigma gets its own family of streams.
    const EvalRun run = evaluate(policy, env, std::span<const RegimeSpec>(&all, 1), episodes_per_sigma,
                                 splitmix64(seed) ^ (i + 1), argmax, exec, StreamDomain::kSweep);
    const RegimeResult& res = run.regimes.front();
    out.push_back({sigmas[i], res.mean_return, res.stderr_return, res.mean_latency, res.episodes});
  }
  return out;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ContractViolation("spearman needs two equal-length series of length >= 2");
  }
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

Dispersion across_seeds(std::span<const double> values) {
  Dispersion d;
  if (values.empty()) return d;
  const double n = static_cast<double>(values.size());
  d.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - d.mean) * (v - d.mean);
    d.std = std::sqrt(ss / (n - 1.0));
  }
  return d;
}

namespace {

double regime_return(const EvalRun& run, const std::string& name) {
  for (const auto& r : run.regimes) {
    if (r.regime.name == name) return r.mean_return;
  }
  throw ContractViolation("no regime named '" + name + "'");
}

}  // namespace

Dispersion VariantResult::id_return(const std::string& regime) const {
  std::vector<double> v;
  for (const auto& run : id) v.push_back(regime_return(run, regime));
  return across_seeds(v);
}

Dispersion VariantResult::ood_return() const {
  std::vector<double> v;
  for (const auto& run : ood) v.push_back(regime_return(run, "ood"));
  return across_seeds(v);
}

Dispersion VariantResult::id_ece() const {
  std::vector<double> v;
  for (const auto& c : id_calibration) v.push_back(c.ece);
  return across_seeds(v);
}

Dispersion VariantResult::ood_ece() const {
  std::vector<double> v;
  for (const auto& c : ood_calibration) v.push_back(c.ece);
  return across_seeds(v);
}

std::vector<SweepPoint> VariantResult::mean_sweep() const {
  if (sweep.empty()) return {};
  std::vector<SweepPoint> out = sweep.front();
  const double n = static_cast<double>(sweep.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double ret = 0.0, lat = 0.0, var = 0.0;
    std::size_t eps = 0;
    for (const auto& curve : sweep) {
      ret += curve[i].mean_return;
      lat += curve[i].mean_latency;
      var += curve[i].stderr_return * curve[i].stderr_return;
      eps += curve[i].episodes;
    }
    out[i].mean_return = ret / n;
    out[i].mean_latency = lat / n;
    out[i].stderr_return = std::sqrt(var) / n;
    out[i].episodes = eps;
  }
  return out;
}

void evaluate_seed(VariantResult& res, const Policy& p, std::uint64_t seed, const EnvConfig& train_env,
                   const EvalConfig& eval, bool with_ood, bool with_sweep, Exec exec) {
  const auto id_specs = id_regimes(train_env, eval);
  EvalRun id_run = evaluate(p, train_env, id_specs, eval.id_episodes, seed, eval.argmax, exec);
  res.id_calibration.push_back(ece(id_run.commits, eval.ece_bins, id_run.episodes));
  res.id.push_back(std::move(id_run));
  if (with_ood) {
    const RegimeSpec ood = ood_regime(eval);
    EnvConfig ood_env = train_env;
    ood_env.sigma_lo = ood.sigma_lo;
    ood_env.sigma_hi = ood.sigma_hi;
    // Offset so the shifted-range episodes never share streams with the ID ones.
    EvalRun ood_run = evaluate(p, ood_env, std::span<const RegimeSpec>(&ood, 1), eval.ood_episodes,
                               seed + 0x100000, eval.argmax, exec);
    res.ood_calibration.push_back(ece(ood_run.commits, eval.ece_bins, ood_run.episodes));
    res.ood.push_back(std::move(ood_run));
  }
  if (with_sweep) {
    res.sweep.push_back(sigma_sweep(p, train_env, eval.sweep_sigmas, eval.sweep_episodes, seed, eval.argmax, exec));
  }
  res.seeds.push_back(seed);
}

VariantResult ood_protocol(Variant variant, std::span<const Policy> seed_policies,
                           std::span<const std::uint64_t> seeds, const EnvConfig& train_env,
                           const EvalConfig& eval, Exec exec) {
  if (seed_policies.size() != seeds.size()) {
    throw ContractViolation("ood_protocol: one policy per seed required");
  }
  eval.validate(train_env);
  VariantResult res;
  res.variant = variant;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    evaluate_seed(res, seed_policies[s], seeds[s], train_env, eval, true, true, exec);
  }
  return res;
}

namespace {

std::string f(double v, int prec = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void emit_header(std::ostringstream& out, const std::vector<std::string>& header) {
  for (const auto& h : header) out << "# " << h << '\n';
}

std::string pm(const Dispersion& d) { return f(d.mean, 3) + " ± " + f(d.std, 3); }

}  // namespace

std::string regime_csv(const VariantResult& r, bool ood, const std::vector<std::string>& header) {
  std::ostringstream out;
  emit_header(out, header);
  out << "variant,regime,sigma_lo,sigma_hi,mean_return,std_across_seeds,mean_latency,episodes";
  for (auto s : r.seeds) out << ",seed_" << s;
  out << '\n';
  const auto& runs = ood ? r.ood : r.id;
  if (runs.empty()) return out.str();
  for (std::size_t k = 0; k < runs.front().regimes.size(); ++k) {
    std::vector<double> per_seed;
    double lat = 0.0;
    std::size_t eps = 0;
    for (const auto& run : runs) {
      per_seed.push_back(run.regimes[k].mean_return);
      lat += run.regimes[k].mean_latency;
      eps += run.regimes[k].episodes;
    }
    const Dispersion d = across_seeds(per_seed);
    const RegimeSpec& spec = runs.front().regimes[k].regime;
    out << to_string(r.variant) << ',' << spec.name << ',' << f(spec.sigma_lo, 4) << ',' << f(spec.sigma_hi, 4) << ','
        << f(d.mean) << ',' << f(d.std) << ',' << f(lat / static_cast<double>(runs.size())) << ',' << eps;
    for (double v : per_seed) out << ',' << f(v);
    out << '\n';
  }
  return out.str();
}

std::string calibration_csv(const VariantResult& r, bool ood, const std::vector<std::string>& header) {
  std::ostringstream out;
  emit_header(out, header);
  out << "variant,seed,bin,lo,hi,mean_confidence,accuracy,count,ece,committed_fraction\n";
  const auto& cals = ood ? r.ood_calibration : r.id_calibration;
  for (std::size_t s = 0; s < cals.size(); ++s) {
    for (std::size_t b = 0; b < cals[s].bins.size(); ++b) {
      const CalibrationBin& bin = cals[s].bins[b];
      out << to_string(r.variant) << ',' << r.seeds[s] << ',' << b << ',' << f(bin.lo, 3) << ',' << f(bin.hi, 3) << ','
          << f(bin.mean_confidence) << ',' << f(bin.accuracy) << ',' << bin.count << ',' << f(cals[s].ece) << ','
          << f(cals[s].committed_fraction) << '\n';
    }
  }
  return out.str();
}

std::string sweep_csv(std::span<const VariantResult> results, const std::vector<std::string>& header) {
  std::ostringstream out;
  emit_header(out, header);
  out << "variant,sigma,mean_return,stderr_return,mean_latency,episodes\n";
  for (const auto& r : results) {
    for (const SweepPoint& p : r.mean_sweep()) {
      out << to_string(r.variant) << ',' << f(p.sigma, 3) << ',' << f(p.mean_return) << ',' << f(p.stderr_return)
          << ',' << f(p.mean_latency) << ',' << p.episodes << '\n';
    }
  }
  return out.str();
}

std::string markdown_report(std::span<const VariantResult> results, const EnvConfig& env, const EvalConfig& eval,
                            const std::vector<std::string>& header) {
  std::ostringstream out;
  for (const auto& h : header) out << "<!-- " << h << " -->\n";
  const auto any = [&](auto pred) { return std::any_of(results.begin(), results.end(), pred); };
  if (any([](const VariantResult& r) { return !r.id.empty(); })) {
    out << "\n## In-distribution returns (sigma ~ U(" << f(env.sigma_lo, 2) << ", " << f(env.sigma_hi, 2) << "))\n\n";
    out << "Hard = sigma in [" << f(eval.hard_lo, 2) << ", " << f(env.sigma_hi, 2) << "], very hard = sigma in ["
        << f(eval.very_hard_lo, 2) << ", " << f(env.sigma_hi, 2) << "]. Mean ± std across seeds.\n\n";
    out << "| Model | Mean return | Hard return | Very-hard return |\n|---|---|---|---|\n";
    for (const auto& r : results) {
      if (r.id.empty()) continue;
      out << "| " << to_string(r.variant) << " | " << pm(r.id_return("mean")) << " | " << pm(r.id_return("hard"))
          << " | " << pm(r.id_return("very_hard")) << " |\n";
    }
  }
  if (any([](const VariantResult& r) { return !r.ood.empty(); })) {
    out << "\n## Held-out noise shift (train U(" << f(env.sigma_lo, 2) << ", " << f(env.sigma_hi, 2)
        << "), evaluate U(" << f(eval.ood_sigma_lo, 2) << ", " << f(eval.ood_sigma_hi, 2) << "))\n\n";
    out << "| Model | OOD mean return | OOD very-hard return |\n|---|---|---|\n";
    for (const auto& r : results) {
      if (r.ood.empty()) continue;
      // The shifted range is evaluated as a single regime, so both columns agree.
      out << "| " << to_string(r.variant) << " | " << pm(r.ood_return()) << " | " << pm(r.ood_return()) << " |\n";
    }
  }
  if (any([](const VariantResult& r) { return !r.id_calibration.empty(); })) {
    out << "\n## Ablation and calibration (ECE: " << eval.ece_bins << " bins over [0.5, 1], commit step)\n\n";
    out << "| Model | ID return | OOD return | ID ECE | OOD ECE |\n|---|---|---|---|---|\n";
    for (const auto& r : results) {
      if (r.id.empty()) continue;
      const bool has_ood = !r.ood.empty();
      out << "| " << to_string(r.variant) << " | " << f(r.id_return("mean").mean, 3) << " | "
          << (has_ood ? f(r.ood_return().mean, 3) : "-") << " | " << f(r.id_ece().mean, 3) << " | "
          << (has_ood ? f(r.ood_ece().mean, 3) : "-") << " |\n";
    }
  }
  std::vector<std::vector<SweepPoint>> curves;
  for (const auto& r : results) curves.push_back(r.mean_sweep());
  if (curves.empty() || curves.front().empty()) return out.str();
  out << "\n## Sigma sweep (seed-averaged return / latency)\n\n| sigma |";
  for (const auto& r : results) out << ' ' << to_string(r.variant) << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < results.size(); ++i) out << "---|";
  out << '\n';
  for (std::size_t i = 0; i < curves.front().size(); ++i) {
    out << "| " << f(curves.front()[i].sigma, 1) << " |";
    for (const auto& c : curves) {
      out << ' ' << (i < c.size() ? f(c[i].mean_return, 3) + " / " + f(c[i].mean_latency, 2) : "-") << " |";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace bsrl
