#include <doctest.h>

#include <cmath>
#include <random>

#include "bsrl/errors.hpp"
#include "bsrl/loss.hpp"
#include "bsrl/rollout.hpp"
#include "bsrl/selfcheck.hpp"
#include "bsrl/train.hpp"

using namespace bsrl;

constexpr int kWait = static_cast<int>(Action::kWait);

namespace {

EpisodeTrace trace(std::vector<double> rewards) {
  EpisodeTrace tr;
  const std::size_t n = rewards.size();
  tr.rewards = std::move(rewards);
  tr.obs.assign(n, 0.1);
  tr.actions.assign(n, kWait);
  tr.log_probs.assign(n, std::log(1.0 / 3.0));
  tr.values.assign(n, 0.0);
  tr.entropies.assign(n, std::log(3.0));
  tr.sigma = 1.0;
  tr.z = 1;
  return tr;
}

Policy zero_policy(Variant v) {
  Policy p(v, 0);
  for (double& x : p.params().values()) x = 0.0;
  return p;
}

TrainConfig small(Variant v, int steps) {
  TrainConfig c;
  c.variant = v;
  c.opt_steps = steps;
  c.batch_episodes = 32;
  c.snapshot_every = 0;
  return c;
}

}  // namespace

TEST_CASE("discounted returns") {
  Rollout r;
  r.episodes.push_back(trace({-0.05, -0.05, 1.0}));
  auto ra = returns_and_advantages(r, 0.99);
  CHECK(ra[0].returns[0] == doctest::Approx(0.8806).epsilon(1e-12));
  CHECK(ra[0].returns[2] == 1.0);

  Rollout r1;
  r1.episodes.push_back(trace({-0.05, 1.0}));
  CHECK(returns_and_advantages(r1, 1.0)[0].returns[0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("perfect values give zero advantages and zero policy and value loss") {
  Rollout r;
  r.episodes.push_back(trace({-0.05, -0.05, -1.0}));
  r.episodes.push_back(trace({1.0}));
  for (auto& tr : r.episodes) tr.values = returns_and_advantages(r, 0.99)[&tr - r.episodes.data()].returns;
  const auto ra = returns_and_advantages(r, 0.99);
  for (const auto& e : ra)
    for (double a : e.advantages) CHECK(a == 0.0);
  const LossBreakdown l = actor_critic_loss(r, ra, LossConfig{});
  CHECK(l.policy_loss == 0.0);
  CHECK(l.value_loss == 0.0);
}

TEST_CASE("two-step loss by hand") {
  Rollout r;
  EpisodeTrace tr = trace({-0.05, 1.0});
  tr.log_probs = {-0.7, -0.2};
  tr.values = {0.3, 0.6};
  tr.entropies = {1.05, 0.4};
  r.episodes.push_back(tr);
  LossConfig cfg;
  cfg.c_v = 0.5;
  cfg.c_e = 0.01;
  const auto ra = returns_and_advantages(r, 0.9);
  const LossBreakdown l = actor_critic_loss(r, ra, cfg);

  // G = [-0.05 + 0.9, 1], A = [0.55, 0.4]
  const double pol = -(0.55 * -0.7 + 0.4 * -0.2) / 2.0;
  const double val = (0.55 * 0.55 + 0.4 * 0.4) / 2.0;
  const double ent = (1.05 + 0.4) / 2.0;
  CHECK(std::abs(l.policy_loss - pol) < 1e-12);
  CHECK(std::abs(l.value_loss - val) < 1e-12);
  CHECK(std::abs(l.entropy - ent) < 1e-12);
  CHECK(l.belief_aux == 0.0);
  CHECK(std::abs(l.total - (pol + 0.5 * val - 0.01 * ent)) < 1e-12);
}

TEST_CASE("privileged auxiliary loss") {
  Rollout r;
  r.belief_dim = 8;
  EpisodeTrace tr = trace({1.0});
  tr.obs = {2.0};
  tr.mu.assign(8, 0.0);
  const BeliefTarget target = belief_target(tr.obs, 1.0, 1e-4);
  tr.log_sigma.assign(8, target.log_variance);
  r.episodes.push_back(tr);

  LossConfig cfg;
  cfg.privileged = true;
  cfg.beta_mu = 1.0;
  cfg.beta_sigma = 0.0;
  CHECK(belief_aux_loss(r, cfg) == doctest::Approx(std::pow(std::tanh(2.0), 2)).epsilon(1e-14));
  CHECK(belief_aux_loss(r, cfg) == doctest::Approx(0.92936).epsilon(1e-5));

  SUBCASE("only the first belief dimension is supervised by default") {
    r.episodes[0].mu[3] = 5.0;
    CHECK(belief_aux_loss(r, cfg) == doctest::Approx(0.92936).epsilon(1e-5));
    cfg.broadcast_targets = true;
    CHECK(belief_aux_loss(r, cfg) > 5.0);
  }
  SUBCASE("matching targets give zero") {
    r.episodes[0].mu.assign(8, target.mean);
    cfg.beta_sigma = 1.0;
    CHECK(belief_aux_loss(r, cfg) == 0.0);
  }
  SUBCASE("zero weights give zero") {
    cfg.beta_mu = 0.0;
    CHECK(belief_aux_loss(r, cfg) == 0.0);
  }
  SUBCASE("plain variants carry no auxiliary term") {
    cfg.privileged = false;
    CHECK(belief_aux_loss(r, cfg) == 0.0);
  }
  SUBCASE("missing hidden sigma is a contract violation") {
    r.episodes[0].sigma = 0.0;
    CHECK_THROWS_AS(belief_aux_loss(r, cfg), ContractViolation);
  }
}

TEST_CASE("variance targets are floored") {
  const std::vector<double> strong(10, 1.2);
  const BeliefTarget t = belief_target(strong, 0.3, 1e-4);
  CHECK(t.log_variance == std::log(1e-4));
  CHECK(t.mean == doctest::Approx(1.0));
}

TEST_CASE("uniform policy matches the analytic return and an independent simulation") {
  const double analytic = -0.05 * 0.5 * (1.0 - std::pow(3.0, -10));
  CHECK(analytic == doctest::Approx(-0.0249996).epsilon(1e-6));

  const std::size_t n = 100000;
  for (Variant v : {Variant::kMlp, Variant::kBelief, Variant::kRwkvBelief}) {
    const Policy p = zero_policy(v);
    RolloutRequest req;
    req.episodes = n;
    req.seed = 31;
    const Rollout r = collect_rollouts(p, EnvConfig{}, req);
    double m = 0.0, m2 = 0.0;
    for (const auto& tr : r.episodes) {
      m += tr.total_return;
      m2 += tr.total_return * tr.total_return;
    }
    m /= n;
    const double se_a = std::sqrt((m2 / n - m * m) / n);

    // Separate simulation of the same task and policy.
    std::mt19937_64 gen(977);
    std::uniform_int_distribution<int> act(0, 2);
    std::bernoulli_distribution coin(0.5);
    double o = 0.0, o2 = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
      const int z = coin(gen) ? 1 : -1;
      double g = 0.0;
      for (int t = 0; t < 10; ++t) {
        const int a = act(gen);
        if (a == 0) {
          g -= 0.05;
          continue;
        }
        g += ((a == 1) == (z == 1)) ? 1.0 : -1.0;
        break;
      }
      o += g;
      o2 += g * g;
    }
    o /= n;
    const double se_b = std::sqrt((o2 / n - o * o) / n);
    const double se = std::sqrt(se_a * se_a + se_b * se_b);
    INFO(to_string(v), " rollout ", m, " oracle ", o, " se ", se);
    CHECK(std::abs(m - o) < 3.0 * se);
    CHECK(std::abs(m - analytic) < 3.0 * se_a);
  }
}

TEST_CASE("rollout traces are well formed") {
  const Policy p(Variant::kBeliefGated, 3);
  RolloutRequest req;
  req.episodes = 500;
  req.seed = 3;
  const Rollout r = collect_rollouts(p, EnvConfig{}, req);
  REQUIRE(r.episodes.size() == 500);
  CHECK(r.belief_dim == 8);
  std::size_t steps = 0;
  for (const auto& tr : r.episodes) {
    const std::size_t n = tr.length();
    CHECK(n >= 1);
    CHECK(n <= 10);
    CHECK(tr.obs.size() == n);
    CHECK(tr.rewards.size() == n);
    CHECK(tr.log_probs.size() == n);
    CHECK(tr.values.size() == n);
    CHECK(tr.entropies.size() == n);
    CHECK(tr.mu.size() == n * 8);
    CHECK(tr.log_sigma.size() == n * 8);
    CHECK(tr.sigma >= 0.3);
    CHECK(tr.sigma < 1.2);
    CHECK((tr.z == 1 || tr.z == -1));
    if (tr.commit_step) {
      CHECK(*tr.commit_step == static_cast<int>(n) - 1);
      CHECK(tr.actions.back() != kWait);
    } else {
      CHECK(n == 10);
      for (int a : tr.actions) CHECK(a == kWait);
    }
    steps += n;
  }
  CHECK(r.total_steps() == steps);
}

TEST_CASE("single episode and never-guessing policies") {
  RolloutRequest req;
  req.episodes = 1;
  CHECK(collect_rollouts(Policy(Variant::kMlp, 0), EnvConfig{}, req).episodes.size() == 1);

  Policy waiter = zero_policy(Variant::kSummary);
  waiter.params().view("pi.b")[kWait] = 60.0;
  req.episodes = 50;
  const Rollout r = collect_rollouts(waiter, EnvConfig{}, req);
  for (const auto& tr : r.episodes) {
    CHECK_FALSE(tr.commit_step.has_value());
    CHECK(tr.latency(10) == 10);
    CHECK(tr.total_return == doctest::Approx(-0.5));
  }
  CHECK(r.mean_latency(10) == 10.0);
}

TEST_CASE("serial and parallel rollouts agree") {
  const Policy p(Variant::kRwkvBelief, 4);
  RolloutRequest req;
  req.episodes = 64;
  req.seed = 4;
  const Rollout a = collect_rollouts(p, EnvConfig{}, req, Exec::kSerial);
  const Rollout b = collect_rollouts(p, EnvConfig{}, req, Exec::kParallel);
  for (std::size_t e = 0; e < 64; ++e) {
    CHECK(a.episodes[e].obs == b.episodes[e].obs);
    CHECK(a.episodes[e].actions == b.episodes[e].actions);
    CHECK(a.episodes[e].log_probs == b.episodes[e].log_probs);
  }
}

TEST_CASE("zero optimization steps leave the initialization") {
  const TrainResult r = train_run(small(Variant::kBelief, 0), 5);
  const Policy init(Variant::kBelief, 5);
  CHECK(r.metrics.empty());
  CHECK(std::vector<double>(r.policy.params().values().begin(), r.policy.params().values().end()) ==
        std::vector<double>(init.params().values().begin(), init.params().values().end()));
}

TEST_CASE("training is reproducible and independent of the execution mode") {
  TrainConfig c = small(Variant::kBeliefPrivileged, 6);
  c.snapshot_every = 3;
  c.snapshot_episodes = 64;
  const TrainResult a = train_run(c, 7);
  const TrainResult b = train_run(c, 7);
  const TrainResult s = train_run(c, 7, Exec::kSerial);
  CHECK(metrics_csv(a.metrics, {}) == metrics_csv(b.metrics, {}));
  CHECK(metrics_csv(a.metrics, {}) == metrics_csv(s.metrics, {}));
  CHECK(snapshots_csv(a.snapshots, {}) == snapshots_csv(s.snapshots, {}));
  CHECK(a.snapshots.size() == 2);
  const auto pa = a.policy.params().values();
  const auto ps = s.policy.params().values();
  CHECK(std::equal(pa.begin(), pa.end(), ps.begin(), ps.end()));
  CHECK(metrics_csv(train_run(c, 8).metrics, {}) != metrics_csv(a.metrics, {}));
}

TEST_CASE("metrics round trip and recompose exactly") {
  const TrainConfig c = small(Variant::kBeliefPrivileged, 4);
  const TrainResult r = train_run(c, 9);
  const std::string csv = metrics_csv(r.metrics, {"variant belief_privileged"});
  CHECK(csv.rfind("# variant belief_privileged\nstep,policy_loss,value_loss,entropy,belief_aux,", 0) == 0);
  const auto back = parse_metrics_csv(csv);
  REQUIRE(back.size() == 4);
  const LossConfig lc = c.effective_loss();
  for (const auto& row : back) {
    const LossBreakdown l = row.loss;
    CHECK(LossBreakdown::compose(l.policy_loss, l.value_loss, l.entropy, l.belief_aux, lc).total == l.total);
    CHECK(l.belief_aux > 0.0);
  }
  for (Variant v : kAllVariants) {
    const CheckResult res = check_loss_recomposition(v, SelfCheckOptions{});
    INFO(format_check(res));
    CHECK(res.passed);
  }
}

TEST_CASE("losses stay finite for every variant") {
  for (Variant v : kAllVariants) {
    const TrainResult r = train_run(small(v, 20), 10);
    REQUIRE(r.metrics.size() == 20);
    for (const auto& m : r.metrics) {
      CHECK(std::isfinite(m.loss.total));
      CHECK(std::isfinite(m.grad_norm));
      CHECK(m.mean_commit_step >= 0.0);
      CHECK(m.mean_commit_step <= 10.0);
    }
    CHECK((r.metrics.back().loss.belief_aux != 0.0) == (v == Variant::kBeliefPrivileged));
  }
}

TEST_CASE("a large entropy bonus drives the policy toward uniform") {
  TrainConfig c = small(Variant::kBelief, 150);
  c.loss.c_e = 10.0;
  c.batch_episodes = 64;
  const TrainResult r = train_run(c, 11);
  CHECK(std::abs(r.metrics.back().loss.entropy - std::log(3.0)) < 0.05);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  TrainConfig c = small(Variant::kSummary, 3);
  c.loss.c_v = 1e300;
  try {
    train_run(c, 12);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 0") != std::string::npos);
    CHECK(msg.find("grad_norm=") != std::string::npos);
    CHECK(msg.find("value_loss=") != std::string::npos);
  }
}

TEST_CASE("invalid training configurations") {
  TrainConfig c;
  c.batch_episodes = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.gamma = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.loss.c_e = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.seq_len = 12;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.variant = Variant::kMlp;
  c.adapter = AdapterConfig{true, 4};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}
