#include <benchmark/benchmark.h>

#include "spikediff/rng.hpp"
#include "spikediff/snn.hpp"

using namespace spikediff;

static void BM_LifForward(benchmark::State& state) {
  const int64_t steps = state.range(0);
  Rng rng(1);
  Tensor currents = rng.normal_tensor({16 * 16 * 16 * 16, steps});
  NeuronConfig cfg;
  cfg.num_steps = static_cast<int>(steps);
  for (auto _ : state) {
    Tape tape(false);
    Val out = lif(tape, tape.leaf(currents), cfg);
    benchmark::DoNotOptimize(tape.value(out).ptr());
  }
  state.SetItemsProcessed(state.iterations() * currents.numel());
}
BENCHMARK(BM_LifForward)->Arg(4)->Arg(8);

static void BM_LifBackward(benchmark::State& state) {
  const int64_t steps = state.range(0);
  Rng rng(2);
  Tensor currents = rng.normal_tensor({16 * 16 * 16 * 16, steps});
  NeuronConfig cfg;
  cfg.num_steps = static_cast<int>(steps);
  for (auto _ : state) {
    Tape tape;
    Val in = tape.leaf(currents, true);
    Val out = lif(tape, in, cfg);
    tape.backward(ops::reduce_mean_all(tape, out));
    benchmark::DoNotOptimize(tape.grad(in).ptr());
  }
  state.SetItemsProcessed(state.iterations() * currents.numel());
}
BENCHMARK(BM_LifBackward)->Arg(4)->Arg(8);

static void BM_TdBn(benchmark::State& state) {
  Rng rng(3);
  Tensor x = rng.normal_tensor({16, 16, 16, 32, 4});
  Tensor gamma = Tensor::full({32}, 1.0f);
  Tensor beta = Tensor::zeros({32});
  Tensor rm = Tensor::zeros({32}), rv = Tensor::full({32}, 1.0f);
  NeuronConfig cfg;
  for (auto _ : state) {
    Tape tape(false);
    Val out = tdbn(tape, tape.leaf(x), tape.leaf(gamma), tape.leaf(beta), rm, rv, cfg, true);
    benchmark::DoNotOptimize(tape.value(out).ptr());
  }
  state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_TdBn);

BENCHMARK_MAIN();
