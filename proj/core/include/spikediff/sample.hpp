#pragma once

#include "spikediff/schedule.hpp"
#include "spikediff/unet.hpp"

namespace spikediff {

struct SamplerConfig {
  enum class Pipeline { Reference, Signal, Fused };

  int num_inference_steps = 10;
  uint64_t seed = 0;
  Pipeline pipeline = Pipeline::Signal;
  int batch = 16;

  void validate(const NoiseSchedule& sched) const {
    SPD_REQUIRE(num_inference_steps >= 1 && num_inference_steps <= sched.T,
                "sampler: steps must be in 1..T, got ", num_inference_steps);
    SPD_REQUIRE(batch >= 1, "sampler: batch must be >= 1");
  }
};

// Network abstraction for the reference and signal-space pipelines; tests
// substitute stubs, UnetSignalModel wraps the real net in eval mode.
struct SignalModel {
  virtual ~SignalModel() = default;
  virtual int time_steps() const = 0;
  virtual Tensor eval(const Tensor& x_signal, int t) = 0;  // currents -> currents
};

class UnetSignalModel : public SignalModel {
 public:
  UnetSignalModel(ModelParams& params, const UNetConfig& cfg) : params_(params), cfg_(cfg) {}
  int time_steps() const override { return cfg_.neuron.num_steps; }
  Tensor eval(const Tensor& x_signal, int t) override;

 private:
  ModelParams& params_;
  const UNetConfig& cfg_;
};

// x_T ~ N(0,I); per step x_{t-1} = a x_t + b dec(f(enc(x_t), t)). Encode and
// decode happen around every network call.
Tensor sample_reference(SignalModel& model, const NoiseSchedule& sched, const SamplerConfig& cfg,
                        const Shape& image_hwc);

// x'_T = enc(x_T); per step x'_{t-1} = a x'_t + b f(x'_t, t); decoded once.
Tensor sample_signal_space(SignalModel& model, const NoiseSchedule& sched,
                           const SamplerConfig& cfg, const Shape& image_hwc);

// One step's fused convolution: consumes the channel-concatenated bundle of
// (seed signal, all prior last-hidden spike trains) and produces the stem
// currents ConvFirst(a_t x'_t + b_t ConvLast(spikes)) + composed biases.
// The bias is a (H,W,Co) field: the stem conv's zero padding makes composed
// bias contributions position-dependent near the border.
struct FusedStepConv {
  int t = 0;           // the step whose evaluation this conv feeds
  Tensor kernel;       // (Co, kh, kw, bundle_channels)
  Tensor bias_field;   // (H, W, Co)
};

struct FusedPlan {
  std::vector<int> steps;            // increasing sub-sequence of 1..T
  std::vector<FusedStepConv> convs;  // index p feeds the p-th evaluation (p=0 at steps.back())
  Tensor final_kernel;               // (C_img, 1, 1, bundle_channels): reconstructs x'_0
  Tensor final_bias;                 // (C_img)
};

// Builds the conv feeding evaluation `position` (0-based, counted from t =
// steps.back() downward). Rejects models whose boundary layers are not plain
// convolutions or whose final conv is wider than 1x1.
FusedStepConv fuse_step_conv(const ModelParams& params, const UNetConfig& cfg,
                             const NoiseSchedule& sched, const std::vector<int>& steps,
                             int position);

FusedPlan build_fused_plan(const ModelParams& params, const UNetConfig& cfg,
                           const NoiseSchedule& sched, const std::vector<int>& steps);

// Fully fused generation: inter-step state is the spike bundle alone (plus the
// real-valued seed group). Every appended group is checked to be binary.
Tensor sample_fused(ModelParams& params, const UNetConfig& cfg, const NoiseSchedule& sched,
                    const SamplerConfig& cfg_s, const FusedPlan* cached_plan = nullptr);

// helper shared with tests: kernel composition (outer after inner) on the
// zero-extended plane, (Co,k2,k2,Cm) x (Cm,k1,k1,Ci) -> (Co,k1+k2-1,...,Ci)
Tensor compose_conv_kernels(const Tensor& outer, const Tensor& inner);

}  // namespace spikediff
