#pragma once

#include "spikediff/dataset.hpp"
#include "spikediff/schedule.hpp"
#include "spikediff/train.hpp"
#include "spikediff/unet.hpp"

namespace spikediff {

// Full run configuration parsed from `key = value` text with `#` comments.
// Unknown keys and malformed values are rejected with the line number.
struct RunConfig {
  std::string dataset_path;
  DatasetSpec::Format dataset_format = DatasetSpec::Format::IdxImages;
  int image_size = 16;
  int base_channels = 32;
  int levels = 2;
  int snn_steps = 4;
  double v_threshold = 1.0;
  double tau_decay = 0.8;
  double surrogate_width = 1.0;
  int diffusion_T = 100;
  double lr = 1e-3;
  int batch = 32;
  int epochs = 1;
  bool loss_scl = true;
  bool loss_signal = false;
  int sample_steps = 10;
  uint64_t seed = 0;

  NeuronConfig neuron() const {
    NeuronConfig n;
    n.v_threshold = static_cast<float>(v_threshold);
    n.tau_decay = static_cast<float>(tau_decay);
    n.surrogate_width = static_cast<float>(surrogate_width);
    n.num_steps = snn_steps;
    return n;
  }
  UNetConfig unet(int in_channels = 1) const {
    UNetConfig u;
    u.image_size = image_size;
    u.in_channels = in_channels;
    u.base_channels = base_channels;
    u.channel_multipliers.clear();
    for (int l = 1; l <= levels; ++l) u.channel_multipliers.push_back(l);
    u.neuron = neuron();
    return u;
  }
  DatasetSpec dataset() const {
    DatasetSpec d;
    d.path = dataset_path;
    d.format = dataset_format;
    d.image_size = image_size;
    return d;
  }
  TrainConfig train() const {
    TrainConfig t;
    t.lr = lr;
    t.batch = batch;
    t.epochs = epochs;
    t.use_scl = loss_scl;
    t.use_signal_loss = loss_signal;
    t.seed = seed;
    return t;
  }
};

RunConfig parse_config(const std::string& path);

}  // namespace spikediff
