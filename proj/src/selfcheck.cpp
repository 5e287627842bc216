#include "bsrl/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

#include "bsrl/checkpoint.hpp"
#include "bsrl/errors.hpp"
#include "bsrl/eval.hpp"
#include "bsrl/gradcheck.hpp"
#include "bsrl/layers.hpp"
#include "bsrl/loss.hpp"
#include "bsrl/tape.hpp"
#include "bsrl/train.hpp"

namespace bsrl {

namespace {

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string variant_name(Variant v) { return std::string(to_string(v)); }

}  // namespace

CheckResult check_gradient(Variant variant, const AdapterConfig& adapter, const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "gradient/" + variant_name(variant) + (adapter.enabled ? "+adapter" : "");
  res.bound = 1e-4;

  Policy base(variant, opt.seed, adapter);
  // Move away from the zero-initialized adapter and symmetric starts so
  // every parameter carries gradient.
  Rng jitter = make_stream(opt.seed, StreamDomain::kCheck, 1);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  ParamStore store = base.params();
  for (double& w : store.values()) w += u(jitter);
  const Policy policy(variant, store, adapter);

  RolloutRequest req;
  req.episodes = opt.gradcheck_episodes;
  req.seed = opt.seed;
  req.domain = StreamDomain::kCheck;
  const Rollout rollout = collect_rollouts(policy, EnvConfig{}, req, Exec::kSerial);
  const auto returns = returns_and_advantages(rollout, 0.99);
  LossConfig cfg;
  cfg.privileged = variant == Variant::kBeliefPrivileged;

  const auto loss = [&](std::span<const double> p) {
    return batch_loss(policy, p, rollout, returns, cfg).total;
  };
  const auto grad = [&](std::span<const double> p) {
    auto g = batch_loss_gradient(policy, p, rollout, returns, cfg, Exec::kSerial).grad;
    if (opt.fault == InjectedFault::kGradient) {
      for (double& v : g) v *= 1.001;
    }
    return g;
  };
  Rng pick = make_stream(opt.seed, StreamDomain::kCheck, 2);
  GradCheckOptions gopt;
  gopt.min_coordinates = 256;
  const GradCheckReport rep = finite_diff_check(loss, grad, policy.params().values(), gopt, pick);
  res.measured = rep.max_rel_error;
  res.passed = rep.passed() && rep.coordinates_checked >= gopt.min_coordinates;
  res.detail = std::to_string(rep.coordinates_checked) + " coordinates, " + std::to_string(rep.failures.size()) +
               " above tolerance";
  return res;
}

CheckResult check_posterior_oracle(const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "posterior_oracle";
  res.bound = 1e-10;
  Rng rng = make_stream(opt.seed, StreamDomain::kCheck, 3);
  std::uniform_real_distribution<double> sig(0.3, 1.2);
  std::uniform_int_distribution<int> len(1, 10);
  std::normal_distribution<double> noise(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t c = 0; c < opt.posterior_cases; ++c) {
    const double sigma = sig(rng);
    const double z = rng() & 1 ? 1.0 : -1.0;
    std::vector<double> xs(static_cast<std::size_t>(len(rng)));
    for (double& x : xs) x = z + sigma * noise(rng);
    // Brute force: product of Gaussian likelihoods under each hypothesis.
    long double lp = 1.0L, ln = 1.0L;
    for (double x : xs) {
      const long double s2 = static_cast<long double>(sigma) * sigma;
      lp *= std::exp(-(x - 1.0L) * (x - 1.0L) / (2.0L * s2));
      ln *= std::exp(-(x + 1.0L) * (x + 1.0L) / (2.0L * s2));
    }
    const long double tot = lp + ln;
    const double mean = static_cast<double>((lp - ln) / tot);
    const double var = static_cast<double>(4.0L * lp * ln / (tot * tot));
    const PosteriorMoments m = posterior_moments(xs, sigma);
    worst = std::max({worst, std::abs(m.mean - mean) / std::max(std::abs(mean), 1e-300),
                      std::abs(m.variance - var) / std::max(var, 1e-300)});
  }
  res.measured = worst;
  res.passed = worst <= res.bound;
  res.detail = std::to_string(opt.posterior_cases) + " cases, relative error";
  return res;
}

CheckResult check_stability(Variant variant, const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "stability/" + variant_name(variant);
  const Policy policy(variant, opt.seed);
  Rng rng = make_stream(opt.seed, StreamDomain::kCheck, 4);
  const StabilityReport rep = stability_probe(policy, opt.stability_input_bound, opt.stability_steps, rng);
  res.measured = rep.max_state_norm;
  res.bound = rep.state_bound;
  res.passed = rep.within_bounds();
  res.detail = "rho " + fmt("%.4f", rep.rho) + ", " + std::to_string(rep.steps) + " steps";
  if (has_belief(variant)) {
    res.detail += ", belief " + fmt("%.4g", rep.max_belief_norm) + " <= " + fmt("%.4g", rep.belief_bound);
  }
  return res;
}

CheckResult check_synthetic_ece(const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "ece_synthetic";
  res.bound = 0.01;
  Rng rng = make_stream(opt.seed, StreamDomain::kCheck, 5);
  std::uniform_real_distribution<double> conf(0.5, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<CommitRecord> recs(opt.ece_samples);
  for (auto& r : recs) {
    r.confidence = conf(rng);
    r.correct = coin(rng) < r.confidence;
  }
  res.measured = ece(recs, 10, recs.size()).ece;
  res.passed = res.measured < res.bound;
  res.detail = std::to_string(recs.size()) + " records";
  return res;
}

CheckResult check_softmax_identities() {
  CheckResult res;
  res.name = "softmax_entropy";
  res.bound = 1e-12;
  double worst = 0.0;
  const double uniform[3] = {0.7, 0.7, 0.7};
  worst = std::max(worst, std::abs(entropy_of(uniform) - std::log(3.0)));
  const double cases[][3] = {{0.0, 1.0, -2.0}, {30.0, -30.0, 5.0}, {1e-3, 2e-3, -4e-3}, {-700.0, -701.0, -699.5}};
  Tape tape;
  for (const auto& l : cases) {
    const auto p = softmax(l);
    worst = std::max(worst, std::abs(p[0] + p[1] + p[2] - 1.0));
    const double shifted[3] = {l[0] + 12.5, l[1] + 12.5, l[2] + 12.5};
    const auto q = softmax(shifted);
    double h = 0.0;
    for (int a = 0; a < 3; ++a) {
      worst = std::max(worst, std::abs(p[a] - q[a]));
      if (p[a] > 0.0) h -= p[a] * std::log(p[a]);
    }
    worst = std::max(worst, std::abs(entropy_of(l) - h));
    tape.reset({});
    const Var ls = tape.log_softmax(tape.constant(std::span<const double>(l, 3)));
    for (int a = 0; a < 3; ++a) {
      if (p[a] > 1e-300) worst = std::max(worst, std::abs(tape.value(ls)[a] - std::log(p[a])));
    }
  }
  res.measured = worst;
  res.passed = worst <= res.bound;
  res.detail = "uniform entropy = ln 3, normalization, shift invariance, log-softmax";
  return res;
}

CheckResult check_checkpoint_roundtrip(const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "checkpoint_roundtrip";
  std::size_t mismatched = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("bsrl-check-" + std::to_string(std::random_device{}()) + std::to_string(opt.seed));
  for (Variant v : kAllVariants) {
    const Policy p(v, opt.seed + 11);
    const auto path = dir / (variant_name(v) + ".ckpt");
    save_checkpoint(path, p.params(), {"selfcheck", opt.seed, {{"variant", variant_name(v)}}});
    const Checkpoint back = load_checkpoint(path);
    const auto a = p.params().values();
    const auto b = back.params.values();
    if (!(back.params.layout() == p.params().layout()) || a.size() != b.size() ||
        std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
      ++mismatched;
    }
  }
  std::filesystem::remove_all(dir);
  res.measured = static_cast<double>(mismatched);
  res.bound = 0.0;
  res.passed = mismatched == 0;
  res.detail = "bitwise comparison over all variants";
  return res;
}

CheckResult check_determinism(const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "determinism";
  TrainConfig cfg;
  cfg.variant = Variant::kBelief;
  cfg.opt_steps = opt.determinism_steps;
  const TrainResult a = train_run(cfg, opt.seed, Exec::kParallel);
  const TrainResult b = train_run(cfg, opt.seed, Exec::kParallel);
  const TrainResult c = train_run(cfg, opt.seed, Exec::kSerial);
  const auto same_params = [](const TrainResult& x, const TrainResult& y) {
    const auto p = x.policy.params().values();
    const auto q = y.policy.params().values();
    return p.size() == q.size() && std::memcmp(p.data(), q.data(), p.size() * sizeof(double)) == 0;
  };
  const std::string ma = metrics_csv(a.metrics, {});
  int differences = 0;
  differences += ma != metrics_csv(b.metrics, {});
  differences += ma != metrics_csv(c.metrics, {});
  differences += !same_params(a, b);
  differences += !same_params(a, c);
  res.measured = differences;
  res.bound = 0.0;
  res.passed = differences == 0;
  res.detail = std::to_string(opt.determinism_steps) + " steps; rerun and serial replay compared byte for byte";
  return res;
}

CheckResult check_loss_recomposition(Variant variant, const SelfCheckOptions& opt) {
  CheckResult res;
  res.name = "loss_recomposition/" + variant_name(variant);
  TrainConfig cfg;
  cfg.variant = variant;
  cfg.opt_steps = opt.recomposition_steps;
  cfg.batch_episodes = 32;
  const LossConfig lc = cfg.effective_loss();
  const TrainResult r = train_run(cfg, opt.seed, Exec::kParallel);
  const auto parsed = parse_metrics_csv(metrics_csv(r.metrics, {}));
  std::size_t bad = 0;
  for (std::size_t i = 0; i < r.metrics.size(); ++i) {
    for (const LossBreakdown& l : {r.metrics[i].loss, parsed[i].loss}) {
      const LossBreakdown c = LossBreakdown::compose(l.policy_loss, l.value_loss, l.entropy, l.belief_aux, lc);
      bad += c.total != l.total;
    }
  }
  res.measured = static_cast<double>(bad);
  res.bound = 0.0;
  res.passed = bad == 0 && parsed.size() == r.metrics.size() && !r.metrics.empty();
  res.detail = std::to_string(r.metrics.size()) + " logged steps, in memory and re-parsed";
  return res;
}

std::vector<CheckResult> run_selfcheck(const SelfCheckOptions& opt) {
  std::vector<CheckResult> out;
  for (Variant v : kAllVariants) out.push_back(check_gradient(v, {}, opt));
  out.push_back(check_gradient(Variant::kBelief, AdapterConfig{true, 4}, opt));
  out.push_back(check_posterior_oracle(opt));
  for (Variant v : kAllVariants) {
    if (has_accumulators(v)) out.push_back(check_stability(v, opt));
  }
  out.push_back(check_synthetic_ece(opt));
  out.push_back(check_softmax_identities());
  out.push_back(check_checkpoint_roundtrip(opt));
  out.push_back(check_determinism(opt));
  for (Variant v : kAllVariants) out.push_back(check_loss_recomposition(v, opt));
  return out;
}

std::string format_check(const CheckResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s %-34s measured %.3e bound %.3e (%s)", r.passed ? "PASS" : "FAIL", r.name.c_str(),
                r.measured, r.bound, r.detail.c_str());
  return buf;
}

}  // namespace bsrl
