#include <benchmark/benchmark.h>

#include "datta/adaptation.hpp"
#include "datta/normalizers.hpp"
#include "datta/rng.hpp"

using namespace datta;

namespace {

adapt::Model desk_model() {
  adapt::ModelSpec spec;  // 3x32x32 -> 12,24,48
  adapt::Model m(spec, 1);
  Rng rng(2);
  for (auto& site : m.sites()) {
    for (int64_t c = 0; c < site.state.channels(); ++c) {
      site.state.mu_source[c] = static_cast<float>(rng.uniform(-0.5, 0.5));
      site.state.var_source[c] = static_cast<float>(rng.uniform(0.3, 1.5));
    }
  }
  return m;
}

Tensor random_batch(int n) {
  Rng rng(3);
  Tensor t({n, 3, 32, 32});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(0.0, 1.0));
  return t;
}

}  // namespace

static void BM_ComputeBatchStats(benchmark::State& state) {
  const Tensor f = random_batch(64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(norm::compute_batch_stats(f));
  }
}
BENCHMARK(BM_ComputeBatchStats);

static void BM_NormalizeStrategy(benchmark::State& state, norm::Strategy strategy) {
  adapt::Model m = desk_model();
  norm::BNLayerState st = m.sites()[0].state;
  st.params.strategy = strategy;
  Rng rng(5);
  Tensor f({64, 12, 14, 14});
  for (int64_t i = 0; i < f.numel(); ++i) f[i] = static_cast<float>(rng.normal());
  const norm::BatchStats stats = norm::compute_batch_stats(f);
  const auto gate = diversity::DiversityGate::forced(true);
  for (auto _ : state) {
    benchmark::DoNotOptimize(norm::normalize(f, st, stats, gate));
  }
}
BENCHMARK_CAPTURE(BM_NormalizeStrategy, tbn, norm::Strategy::kTbn);
BENCHMARK_CAPTURE(BM_NormalizeStrategy, dabn, norm::Strategy::kDabn);
BENCHMARK_CAPTURE(BM_NormalizeStrategy, iabn, norm::Strategy::kIabn);

static void BM_Step(benchmark::State& state, adapt::Method method) {
  adapt::AdaptationConfig cfg;
  cfg.method = method;
  cfg.t_init = 2;
  adapt::AdaptSession session(desk_model(), cfg, 64);
  const Tensor batch = random_batch(64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(session.step(batch));
  }
}
BENCHMARK_CAPTURE(BM_Step, source, adapt::Method::kSource);
BENCHMARK_CAPTURE(BM_Step, bn_stats, adapt::Method::kBnStats);
BENCHMARK_CAPTURE(BM_Step, datta, adapt::Method::kDatta);
BENCHMARK_CAPTURE(BM_Step, tent, adapt::Method::kTent);

BENCHMARK_MAIN();
