#pragma once

#include <map>

#include "spikediff/opcount.hpp"
#include "spikediff/rng.hpp"
#include "spikediff/snn.hpp"

namespace spikediff {

// Spiking UNet over signal tensors (B,H,W,C,S). Synaptic currents enter the
// stem convolution; every other conv/linear consumes binary spikes; the final
// 1x1 convolution emits synaptic currents. Downsampling is avgpool2x2 + 1x1
// conv, upsampling nearest-2x + 3x3 conv, and the last conv's input is the
// concatenation of every full-resolution ResBlock output.
struct UNetConfig {
  int image_size = 16;
  int in_channels = 1;
  int base_channels = 32;
  std::vector<int> channel_multipliers = {1, 2};
  int num_res_blocks = 2;
  int time_embed_dim = 0;  // 0 -> 4 * base_channels
  NeuronConfig neuron;

  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int embed_dim() const { return time_embed_dim > 0 ? time_embed_dim : 4 * base_channels; }
  int level_channels(int level) const {
    return base_channels * channel_multipliers[static_cast<size_t>(level)];
  }

  void validate() const {
    neuron.validate();
    SPD_REQUIRE(!channel_multipliers.empty(), "unet: need at least one level");
    SPD_REQUIRE(base_channels >= 1 && in_channels >= 1, "unet: channel counts must be >= 1");
    SPD_REQUIRE(num_res_blocks >= 1, "unet: num_res_blocks must be >= 1");
    SPD_REQUIRE(embed_dim() % 2 == 0, "unet: time_embed_dim must be even, got ", embed_dim());
    int div = 1 << (levels() - 1);
    SPD_REQUIRE(image_size % div == 0, "unet: image size ", image_size,
                " not divisible by 2^(levels-1) = ", div);
  }
};

// Named weight tensors plus non-trainable buffers (tdBN running statistics).
struct ModelParams {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, Tensor> buffers;

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : tensors) n += t.numel();
    return n;
  }
};

// Raw sinusoidal embedding: half sine, half cosine over geometric frequencies.
// Inside the network it is direct-encoded over time and passed through two
// linear+tdBN+LIF layers before the per-ResBlock projections.
Tensor time_embedding(int t, int dim);

// Deterministic fan-in-scaled uniform initialization; tdBN gamma=1 beta=0;
// the final conv starts at zero.
ModelParams build_unet(const UNetConfig& cfg, uint64_t seed);

struct LayerTrace {
  std::string name;
  SignalKind input_kind;
  bool input_binary;
};

struct ForwardOptions {
  bool train = false;            // tdBN batch statistics + parameter gradients
  OpCounter* counter = nullptr;  // optional dynamic op accounting
  std::vector<LayerTrace>* trace = nullptr;
};

struct UnetRun {
  Val output;        // synaptic currents, same shape as the input signal
  Val stem_current;  // stem conv output (pre-tdBN)
  Val last_hidden;   // concatenated spikes feeding the final conv
  std::map<std::string, Val> bound;  // parameter name -> tape leaf
};

// t is the diffusion step per batch element (size B, or size 1 applied to all).
UnetRun unet_forward(Tape& tape, ModelParams& params, const UNetConfig& cfg, Val x_signal,
                     const std::vector<int>& t, const ForwardOptions& opts = {});

// Runs everything after the stem convolution, from externally supplied stem
// currents to the final conv's input spikes. The fused sampling pipeline
// substitutes its per-step fused convolution for the stem.
Val unet_body_from_stem(Tape& tape, ModelParams& params, const UNetConfig& cfg, Val stem_current,
                        const std::vector<int>& t, const ForwardOptions& opts = {});

}  // namespace spikediff
