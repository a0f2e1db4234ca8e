#include <benchmark/benchmark.h>

#include "disents/gate.hpp"
#include "disents/linalg.hpp"
#include "disents/lwa.hpp"
#include "disents/pipeline.hpp"
#include "disents/random.hpp"

using namespace disents;

namespace {

Tensor noise(Shape s, std::uint64_t seed) {
  Rng r(seed);
  return r.normal_tensor(std::move(s), 1.0);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = noise({n, n}, 1), b = noise({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_values(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 256)->Complexity();

// the LWA regression shape: k = 2 * L_in rows
void BM_Pinv(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  const Tensor x = noise({2 * L, L}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(pinv(x));
}
BENCHMARK(BM_Pinv)->Arg(24)->Arg(48)->Arg(96)->Arg(336);

void BM_Route(benchmark::State& state) {
  GateConfig gc;
  gc.lookback = 48;
  gc.horizon = 24;
  gc.experts = static_cast<std::size_t>(state.range(0));
  Rng init(4);
  const GateParams gp = GateParams::create(gc, init);
  std::vector<Tensor> gamma;
  for (std::size_t k = 0; k < gc.experts; ++k) gamma.push_back(noise({48, 24}, 10 + k));
  const Var x = Var::constant(noise({32, 8, 48}, 5));
  for (auto _ : state) benchmark::DoNotOptimize(route(x, gamma, gp, false, nullptr));
}
BENCHMARK(BM_Route)->Arg(2)->Arg(4)->Arg(8);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig mc;
  mc.backbone.lookback = 48;
  mc.backbone.horizon = 24;
  mc.experts = static_cast<std::size_t>(state.range(0));
  DisenTSModel model(mc);
  AdamState opt(model.parameters(), AdamConfig{});
  Rng rng(6);
  const Batch batch{noise({32, 8, 48}, 7), noise({32, 8, 24}, 8)};
  for (auto _ : state) benchmark::DoNotOptimize(train_step(model, batch, opt, rng));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
