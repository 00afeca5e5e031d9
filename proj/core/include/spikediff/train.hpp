#pragma once

#include <functional>

#include "spikediff/schedule.hpp"
#include "spikediff/unet.hpp"

namespace spikediff {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 32;
  int epochs = 1;
  int max_steps = 0;      // 0 = bounded by epochs only
  bool use_scl = true;
  bool use_signal_loss = false;
  double grad_clip = 0;   // global-norm clip, 0 = off
  uint64_t seed = 0;
  int log_every = 50;     // progress lines, 0 = quiet

  void validate() const {
    SPD_REQUIRE(lr > 0, "train: learning rate must be > 0, got ", lr);
    SPD_REQUIRE(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1,
                "train: adam betas must be in [0,1), got ", beta1, ", ", beta2);
    SPD_REQUIRE(batch >= 1, "train: batch must be >= 1, got ", batch);
  }
};

struct LossBreakdown {
  // unweighted per-sample mean squared norms
  double l_ddpm = 0;
  double l_scl = 0;
  double l_signal = 0;
  // per-element gamma_t / lambda_t weighted parts; total is their sum
  double weighted_ddpm = 0;
  double weighted_scl = 0;
  double weighted_signal = 0;
  double total = 0;
};

struct StepResult {
  std::map<std::string, Tensor> grads;
  LossBreakdown loss;
  std::vector<int> ts;  // the sampled diffusion steps, one per batch element
};

// One Monte-Carlo step: samples t and eps per batch element, forms x_t and the
// velocity target, runs the net on the encoded signal and differentiates
// gamma_t * |v - dec(y)|^2 + lambda_t * |y - enc(dec(y))|^2 (plus the optional
// encoded-target term). x0 must already be scaled to [-1, 1].
StepResult training_step(ModelParams& params, const UNetConfig& cfg, const Tensor& x0_batch,
                         Rng& rng, const NoiseSchedule& sched, const TrainConfig& tcfg);

// lambda_t * |enc(z) - y|^2, batch-meaned; the ablation loss
Val signal_loss(Tape& tape, Val y_signal, Val z_image, int t, const NoiseSchedule& sched);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  int64_t step = 0;
};

// standard bias-corrected update; moments are created on first use
void adam_update(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                 const TrainConfig& tcfg);

// Called after every optimizer step; also flags the final step so callers can
// persist checkpoints / sample grids. Exceptions from the sink halt training.
using CheckpointSink =
    std::function<void(int64_t step, const ModelParams& params, const AdamState& state, bool last)>;

struct TrainResult {
  std::vector<LossBreakdown> history;  // one entry per optimizer step
  int64_t steps = 0;
};

TrainResult train_loop(ModelParams& params, const UNetConfig& cfg, const Tensor& dataset,
                       const NoiseSchedule& sched, const TrainConfig& tcfg,
                       AdamState* state = nullptr, const CheckpointSink& sink = {});

}  // namespace spikediff
