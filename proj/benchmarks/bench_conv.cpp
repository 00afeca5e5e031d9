#include <benchmark/benchmark.h>

#include "spikediff/ops.hpp"
#include "spikediff/rng.hpp"

using namespace spikediff;

static void BM_Conv2dForward(benchmark::State& state) {
  const int64_t channels = state.range(0);
  Rng rng(1);
  Tensor x = rng.normal_tensor({16, 16, 16, channels, 4});
  Tensor w = rng.normal_tensor({channels, 3, 3, channels});
  Tensor b = rng.normal_tensor({channels});
  for (auto _ : state) {
    Tensor y = ops::conv2d_forward(x, w, &b, {1, 1});
    benchmark::DoNotOptimize(y.ptr());
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(32)->Arg(64);

static void BM_Conv2dBackward(benchmark::State& state) {
  const int64_t channels = state.range(0);
  Rng rng(2);
  Tensor x = rng.normal_tensor({16, 16, 16, channels, 4});
  Tensor w = rng.normal_tensor({channels, 3, 3, channels});
  Tensor dy = rng.normal_tensor({16, 16, 16, channels, 4});
  for (auto _ : state) {
    Tensor dx, dw, db;
    ops::conv2d_backward(x, w, {1, 1}, dy, &dx, &dw, &db);
    benchmark::DoNotOptimize(dx.ptr());
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(16)->Arg(32);

BENCHMARK_MAIN();
