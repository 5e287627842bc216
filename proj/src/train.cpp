#include "bsrl/train.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "bsrl/errors.hpp"

namespace bsrl {

void TrainConfig::validate() const {
  env.validate();
  if (opt_steps < 0) throw ConfigError("train.opt_steps must be >= 0");
  if (batch_episodes < 1) throw ConfigError("train.batch_episodes must be >= 1");
  if (seq_len < 1) throw ConfigError("train.seq_len must be >= 1");
  if (seq_len != env.max_steps) throw ConfigError("train.seq_len must equal env.max_steps");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must lie in (0, 1]");
  if (loss.c_v < 0.0) throw ConfigError("train.c_v must be >= 0");
  if (loss.c_e < 0.0) throw ConfigError("train.c_e must be >= 0");
  if (loss.beta_mu < 0.0) throw ConfigError("train.beta_mu must be >= 0");
  if (loss.beta_sigma < 0.0) throw ConfigError("train.beta_sigma must be >= 0");
  if (!(loss.target_variance_floor > 0.0 && loss.target_variance_floor <= 1.0)) {
    throw ConfigError("train.target_variance_floor must lie in (0, 1]");
  }
  if (loss.ppo_clip < 0.0 || loss.ppo_clip >= 1.0) throw ConfigError("train.ppo_clip must lie in [0, 1)");
  if (update_epochs < 1) throw ConfigError("train.update_epochs must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("train.adam_beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("train.adam_beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (snapshot_every < 0) throw ConfigError("train.snapshot_every must be >= 0");
  if (snapshot_episodes < 1) throw ConfigError("train.snapshot_episodes must be >= 1");
  adapter.validate(variant, PolicyDims{});
}

LossConfig TrainConfig::effective_loss() const {
  LossConfig l = loss;
  l.privileged = variant == Variant::kBeliefPrivileged;
  return l;
}

namespace {

double norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.policy_loss) && std::isfinite(l.value_loss) && std::isfinite(l.entropy) &&
         std::isfinite(l.belief_aux) && std::isfinite(l.total);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train_run(const TrainConfig& config, std::uint64_t seed, Exec exec, const ProgressFn& progress) {
  config.validate();
  TrainResult result{Policy(config.variant, seed, config.adapter), {}, {}};
  Policy& policy = result.policy;
  AdamState adam(policy.params().size(), config.adam);
  const LossConfig loss_cfg = config.effective_loss();
  const auto batch = static_cast<std::uint64_t>(config.batch_episodes);

  for (int step = 0; step < config.opt_steps; ++step) {
    RolloutRequest req;
    req.episodes = batch;
    req.seed = seed;
    req.domain = StreamDomain::kTrain;
    req.first_index = static_cast<std::uint64_t>(step) * batch;
    const Rollout rollout = collect_rollouts(policy, config.env, req, exec);
    const auto returns = returns_and_advantages(rollout, config.gamma);

    MetricsRow row;
    row.step = step;
    row.mean_return = rollout.mean_return();
    row.mean_commit_step = rollout.mean_latency(config.seq_len);
    for (int epoch = 0; epoch < config.update_epochs; ++epoch) {
      const LossAndGrad lg = batch_loss_gradient(policy, policy.params().values(), rollout, returns, loss_cfg, exec);
      const double gn = norm(lg.grad);
      if (!finite(lg.loss) || !std::isfinite(gn)) {
        std::ostringstream msg;
        msg << "training diverged at step " << step << " (variant " << to_string(config.variant) << ", seed "
            << seed << "): policy_loss=" << lg.loss.policy_loss << " value_loss=" << lg.loss.value_loss
            << " entropy=" << lg.loss.entropy << " belief_aux=" << lg.loss.belief_aux
            << " total=" << lg.loss.total << " grad_norm=" << gn;
        throw DivergenceError(msg.str());
      }
      if (epoch == 0) {
        row.loss = lg.loss;
        row.grad_norm = gn;
      }
      adam_step(policy.params().values(), lg.grad, adam);
    }
    result.metrics.push_back(row);
    if (progress) progress(row);

    const bool last = step + 1 == config.opt_steps;
    if (config.snapshot_every > 0 && ((step + 1) % config.snapshot_every == 0 || last)) {
      RolloutRequest snap;
      snap.episodes = static_cast<std::size_t>(config.snapshot_episodes);
      snap.seed = seed;
      snap.domain = StreamDomain::kSnapshot;
      snap.first_index = static_cast<std::uint64_t>(step) * snap.episodes;
      const Rollout r = collect_rollouts(policy, config.env, snap, exec);
      result.snapshots.push_back({step + 1, r.mean_return(), r.mean_latency(config.seq_len)});
    }
  }
  return result;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, const std::vector<std::string>& header) {
  std::ostringstream out;
  for (const auto& h : header) out << "# " << h << '\n';
  out << "step,policy_loss,value_loss,entropy,belief_aux,mean_return,mean_commit_step,total,grad_norm\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt(r.loss.policy_loss) << ',' << fmt(r.loss.value_loss) << ',' << fmt(r.loss.entropy)
        << ',' << fmt(r.loss.belief_aux) << ',' << fmt(r.mean_return) << ',' << fmt(r.mean_commit_step) << ','
        << fmt(r.loss.total) << ',' << fmt(r.grad_norm) << '\n';
  }
  return out.str();
}

std::string snapshots_csv(const std::vector<Snapshot>& rows, const std::vector<std::string>& header) {
  std::ostringstream out;
  for (const auto& h : header) out << "# " << h << '\n';
  out << "step,mean_return,mean_latency\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt(r.mean_return) << ',' << fmt(r.mean_latency) << '\n';
  }
  return out.str();
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricsRow> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 9) throw ConfigError("malformed metrics row: " + line);
    MetricsRow r;
    r.step = static_cast<int>(v[0]);
    r.loss.policy_loss = v[1];
    r.loss.value_loss = v[2];
    r.loss.entropy = v[3];
    r.loss.belief_aux = v[4];
    r.mean_return = v[5];
    r.mean_commit_step = v[6];
    r.loss.total = v[7];
    r.grad_norm = v[8];
    rows.push_back(r);
  }
  return rows;
}

}  // namespace bsrl
