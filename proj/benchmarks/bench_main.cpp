// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "hyperadapt/hypernet.hpp"
#include "hyperadapt/ops.hpp"
#include "hyperadapt/trainer.hpp"

using namespace hyperadapt;

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(0);
  const Tensor a = Tensor::randn({n, n}, 1.0, rng);
  const Tensor b = Tensor::randn({n, n}, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  Tensor a = Tensor::randn({n, n}, 1.0, rng, true);
  const Tensor b = Tensor::randn({n, n}, 1.0, rng);
  for (auto _ : state) {
    a.zero_grad();
    backward(sum(matmul(a, b)));
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(64);

static void BM_Generate(benchmark::State& state) {
  HyperConfig cfg;
  cfg.backend = static_cast<BackendKind>(state.range(0));
  HyperNet h(HyperRole::P, cfg, 0, false);
  h.register_shape(3);
  std::mt19937_64 rng(2);
  const Tensor p = Tensor::randn({64, 3}, 0.02, rng);
  for (auto _ : state) benchmark::DoNotOptimize(h.generate(p).values().data());
  state.SetLabel(std::string(backend_name(cfg.backend)));
}
BENCHMARK(BM_Generate)->DenseRange(0, 2);

static void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.mode = static_cast<Mode>(state.range(0));
  cfg.total_steps = 1 << 20;
  cfg.warmup_steps = 10;
  cfg.prune.enabled = false;
  Trainer trainer(cfg);
  long step = 0;
  for (auto _ : state) {
    const Batch batch = trainer.next_batch();
    benchmark::DoNotOptimize(trainer.train_step(batch, step++ % cfg.total_steps).total_loss);
  }
  state.SetLabel(std::string(mode_name(cfg.mode)));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
