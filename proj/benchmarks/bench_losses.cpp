#include <benchmark/benchmark.h>

#include "ckgan/trainer.hpp"

using namespace ckgan;

namespace {

// Small embedding network so the costs under comparison dominate.
TrainConfig bench_cfg() {
  TrainConfig cfg;
  cfg.dataset = DatasetKind::Ring;
  cfg.architecture = "simple-ring";
  cfg.kernel.single = KernelKind::gaussian(10.0);
  return cfg;
}

Tensor random_batch(std::size_t n, std::size_t m, Rng& rng) {
  Tensor t({n, m});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1, 1);
  return t;
}

}  // namespace

// Paired-row loss: one kernel evaluation per row, linear in the batch size.
static void BM_CkipmLoss(benchmark::State& state) {
  std::size_t b = static_cast<std::size_t>(state.range(0));
  TrainConfig cfg = bench_cfg();
  TrainState st = init_train_state(cfg);
  Rng rng(7);
  Tensor x = random_batch(b, 2, rng);
  Tensor z = random_batch(b, 2, rng);
  Tensor u({b});
  for (std::size_t i = 0; i < b; ++i) u[i] = rng.uniform01();
  for (auto _ : state) {
    StepGraph sg(cfg, st);
    DLoss dl = ckipm_discriminator_loss(sg, x, z, u);
    benchmark::DoNotOptimize(sg.tape.value(dl.total).item());
  }
}
BENCHMARK(BM_CkipmLoss)->Arg(256)->Arg(1024);

// Gram-matrix estimator: quadratic in the batch size.
static void BM_Mmd2Biased(benchmark::State& state) {
  std::size_t b = static_cast<std::size_t>(state.range(0));
  Rng rng(8);
  Tensor x = random_batch(b, 2, rng);
  Tensor y = random_batch(b, 2, rng);
  KernelKind kind = KernelKind::gaussian(10.0);
  for (auto _ : state) {
    Tape t;
    Val v = mmd2_biased(t, kind, t.constant(x), t.constant(y));
    benchmark::DoNotOptimize(t.value(v).item());
  }
}
BENCHMARK(BM_Mmd2Biased)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
