#include <doctest.h>

#include <cstring>

#include "bsrl/kernels.hpp"
#include "bsrl/train.hpp"

using namespace bsrl;

namespace {

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool same_trace(const EpisodeTrace& a, const EpisodeTrace& b) {
  return same_bits(a.obs, b.obs) && a.actions == b.actions && same_bits(a.rewards, b.rewards) &&
         same_bits(a.log_probs, b.log_probs) && same_bits(a.values, b.values) &&
         same_bits(a.entropies, b.entropies) && same_bits(a.mu, b.mu) && same_bits(a.log_sigma, b.log_sigma) &&
         a.commit_step == b.commit_step && a.sigma == b.sigma && a.z == b.z && a.total_return == b.total_return;
}

struct ThreadGuard {
  int saved = kernels::max_threads();
  ~ThreadGuard() { kernels::set_threads(saved); }
};

}  // namespace

TEST_CASE("parallel simulation matches the serial reference bit for bit") {
  ThreadGuard guard;
  const StopOrGuessEnv env{EnvConfig{}};
  for (Variant v : kAllVariants) {
    const Policy p(v, 1);
    RolloutRequest req;
    req.episodes = 97;
    req.seed = 5;
    req.first_index = 1000;
    const auto ref = kernels::simulate_serial(p, env, req);
    for (int threads : {1, 2, 4}) {
      kernels::set_threads(threads);
      const auto par = kernels::simulate_parallel(p, env, req);
      REQUIRE(par.size() == ref.size());
      bool all = true;
      for (std::size_t i = 0; i < ref.size(); ++i) all = all && same_trace(ref[i], par[i]);
      INFO(to_string(v), " threads ", threads);
      CHECK(all);
    }
  }
}

TEST_CASE("parallel replay matches the serial reference bit for bit") {
  ThreadGuard guard;
  for (Variant v : kAllVariants) {
    const Policy p(v, 2);
    RolloutRequest req;
    req.episodes = 41;
    req.seed = 6;
    const Rollout r = collect_rollouts(p, EnvConfig{}, req, Exec::kSerial);
    const auto ret = returns_and_advantages(r, 0.99);
    LossConfig cfg;
    cfg.privileged = v == Variant::kBeliefPrivileged;
    const std::size_t n = r.episodes.size(), np = p.params().size();
    const double scale = 1.0 / static_cast<double>(r.total_steps());

    std::vector<kernels::EpisodeLoss> ls(n);
    std::vector<double> rs(n * np);
    kernels::replay_batch_serial(p, p.params().values(), r, ret, cfg, scale, true, ls, rs);
    for (int threads : {1, 3}) {
      kernels::set_threads(threads);
      std::vector<kernels::EpisodeLoss> lp(n);
      std::vector<double> rp(n * np);
      kernels::replay_batch_parallel(p, p.params().values(), r, ret, cfg, scale, true, lp, rp);
      INFO(to_string(v), " threads ", threads);
      CHECK(same_bits(rs, rp));
      bool losses = true;
      for (std::size_t i = 0; i < n; ++i) {
        losses = losses && ls[i].policy == lp[i].policy && ls[i].value == lp[i].value &&
                 ls[i].entropy == lp[i].entropy && ls[i].aux == lp[i].aux;
      }
      CHECK(losses);
    }
    kernels::set_threads(2);
    const LossAndGrad a = batch_loss_gradient(p, p.params().values(), r, ret, cfg, Exec::kSerial);
    const LossAndGrad b = batch_loss_gradient(p, p.params().values(), r, ret, cfg, Exec::kParallel);
    CHECK(same_bits(a.grad, b.grad));
    CHECK(a.loss.total == b.loss.total);
    const LossBreakdown c = batch_loss(p, p.params().values(), r, ret, cfg);
    CHECK(c.total == a.loss.total);
  }
}

TEST_CASE("replay reproduces the recorded forward pass") {
  const Policy p(Variant::kRwkvBelief, 3);
  RolloutRequest req;
  req.episodes = 16;
  req.seed = 7;
  const Rollout r = collect_rollouts(p, EnvConfig{}, req);
  const auto ret = returns_and_advantages(r, 0.99);
  const LossConfig cfg;
  const LossBreakdown recorded = actor_critic_loss(r, ret, cfg);
  const LossBreakdown replayed = batch_loss(p, p.params().values(), r, ret, cfg);
  CHECK(replayed.policy_loss == doctest::Approx(recorded.policy_loss).epsilon(1e-12));
  CHECK(replayed.value_loss == doctest::Approx(recorded.value_loss).epsilon(1e-12));
  CHECK(replayed.entropy == doctest::Approx(recorded.entropy).epsilon(1e-12));
}

TEST_CASE("training under several threads is bit-identical to one thread") {
  ThreadGuard guard;
  TrainConfig c;
  c.variant = Variant::kBeliefGated;
  c.opt_steps = 5;
  c.batch_episodes = 24;
  c.snapshot_every = 0;
  kernels::set_threads(1);
  const TrainResult one = train_run(c, 8);
  kernels::set_threads(4);
  const TrainResult four = train_run(c, 8);
  CHECK(metrics_csv(one.metrics, {}) == metrics_csv(four.metrics, {}));
  CHECK(same_bits(one.policy.params().values(), four.policy.params().values()));
}
