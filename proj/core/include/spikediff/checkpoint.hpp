#pragma once

#include <optional>

#include "spikediff/train.hpp"
#include "spikediff/unet.hpp"

namespace spikediff {

// Versioned model container: run configuration, named weight tensors and
// buffers (32-bit little-endian payloads, each with a checksum), optional
// optimizer moments, and the training step counter. Round-trips bit-exactly.
struct Checkpoint {
  UNetConfig unet;
  int diffusion_T = 100;
  bool lambda_signed = false;
  ModelParams params;
  std::optional<AdamState> moments;
  int64_t train_step = 0;

  NoiseSchedule schedule() const {
    return make_cosine_schedule(diffusion_T, unet.neuron.num_steps, lambda_signed);
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace spikediff
