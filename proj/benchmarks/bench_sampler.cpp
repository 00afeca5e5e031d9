#include <benchmark/benchmark.h>

#include "spikediff/rng.hpp"
#include "spikediff/sample.hpp"

using namespace spikediff;

namespace {
UNetConfig desk_cfg() {
  UNetConfig cfg;
  cfg.image_size = 16;
  cfg.in_channels = 1;
  cfg.base_channels = 16;
  cfg.channel_multipliers = {1, 2};
  cfg.neuron.num_steps = 4;
  return cfg;
}
}  // namespace

static void BM_UnetEval(benchmark::State& state) {
  UNetConfig cfg = desk_cfg();
  ModelParams params = build_unet(cfg, 1);
  Rng rng(2);
  Tensor x = rng.normal_tensor({state.range(0), 16, 16, 1, 4});
  UnetSignalModel model(params, cfg);
  for (auto _ : state) {
    Tensor y = model.eval(x, 50);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_UnetEval)->Arg(1)->Arg(16);

static void BM_SignalPipeline(benchmark::State& state) {
  UNetConfig cfg = desk_cfg();
  ModelParams params = build_unet(cfg, 1);
  NoiseSchedule sched = make_cosine_schedule(100, 4);
  SamplerConfig scfg;
  scfg.num_inference_steps = static_cast<int>(state.range(0));
  scfg.batch = 4;
  UnetSignalModel model(params, cfg);
  for (auto _ : state) {
    Tensor y = sample_signal_space(model, sched, scfg, {16, 16, 1});
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_SignalPipeline)->Arg(5)->Arg(10);

static void BM_FusedPipeline(benchmark::State& state) {
  UNetConfig cfg = desk_cfg();
  ModelParams params = build_unet(cfg, 1);
  NoiseSchedule sched = make_cosine_schedule(100, 4);
  SamplerConfig scfg;
  scfg.num_inference_steps = static_cast<int>(state.range(0));
  scfg.batch = 4;
  FusedPlan plan = build_fused_plan(params, cfg, sched,
                                    inference_steps(sched.T, scfg.num_inference_steps));
  for (auto _ : state) {
    Tensor y = sample_fused(params, cfg, sched, scfg, &plan);
    benchmark::DoNotOptimize(y.ptr());
  }
}
BENCHMARK(BM_FusedPipeline)->Arg(5)->Arg(10);

BENCHMARK_MAIN();
