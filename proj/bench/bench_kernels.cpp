#include <benchmark/benchmark.h>

#include <map>

#include "bsrl/kernels.hpp"

using namespace bsrl;

namespace {

struct Fixture {
  Policy policy;
  Rollout rollout;
  std::vector<EpisodeReturns> returns;
  LossConfig loss;
};

const Fixture& fixture(Variant v) {
  static std::map<Variant, Fixture> cache;
  auto it = cache.find(v);
  if (it == cache.end()) {
    Fixture f{Policy(v, 0), {}, {}, {}};
    RolloutRequest req;
    req.episodes = 256;
    f.rollout = collect_rollouts(f.policy, EnvConfig{}, req, Exec::kSerial);
    f.returns = returns_and_advantages(f.rollout, 0.99);
    f.loss.privileged = v == Variant::kBeliefPrivileged;
    it = cache.emplace(v, std::move(f)).first;
  }
  return it->second;
}

Variant variant_arg(const benchmark::State& state) { return kAllVariants[static_cast<std::size_t>(state.range(0))]; }

template <bool Parallel>
void BM_Simulate(benchmark::State& state) {
  const Policy& p = fixture(variant_arg(state)).policy;
  const StopOrGuessEnv env{EnvConfig{}};
  RolloutRequest req;
  req.episodes = 256;
  for (auto _ : state) {
    auto traces = Parallel ? kernels::simulate_parallel(p, env, req) : kernels::simulate_serial(p, env, req);
    benchmark::DoNotOptimize(traces.data());
    ++req.first_index;
  }
  state.SetItemsProcessed(state.iterations() * 256);
  state.SetLabel(std::string(to_string(variant_arg(state))));
}

template <bool Parallel>
void BM_Replay(benchmark::State& state) {
  const Fixture& f = fixture(variant_arg(state));
  const std::size_t n = f.rollout.episodes.size(), np = f.policy.params().size();
  std::vector<kernels::EpisodeLoss> losses(n);
  std::vector<double> rows(n * np);
  const double scale = 1.0 / static_cast<double>(f.rollout.total_steps());
  for (auto _ : state) {
    if (Parallel) {
      kernels::replay_batch_parallel(f.policy, f.policy.params().values(), f.rollout, f.returns, f.loss, scale, true,
                                     losses, rows);
    } else {
      kernels::replay_batch_serial(f.policy, f.policy.params().values(), f.rollout, f.returns, f.loss, scale, true,
                                   losses, rows);
    }
    benchmark::DoNotOptimize(rows.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n));
  state.SetLabel(std::string(to_string(variant_arg(state))));
}

}  // namespace

BENCHMARK(BM_Simulate<false>)->Name("simulate/serial")->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Simulate<true>)->Name("simulate/parallel")->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Replay<false>)->Name("replay/serial")->DenseRange(0, 5)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Replay<true>)->Name("replay/parallel")->DenseRange(0, 5)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
