#include "spikediff/opcount.hpp"

#include <cstdio>

#include "spikediff/metrics.hpp"
#include "spikediff/snn.hpp"

namespace spikediff {

int64_t OpCounter::count_ones(const Tensor& t) {
  int64_t n = 0;
  for (float v : t.data)
    if (v != 0.0f) ++n;
  return n;
}

void OpCounter::record(const std::string& name, int64_t muls, int64_t adds) {
  entries_.push_back(Entry{name, muls, adds});
}

void OpCounter::conv(const std::string& name, const Tensor& input, const Shape& w_shape,
                     ops::Conv2dSpec spec, bool binary_input, bool has_bias) {
  const int64_t b = input.dim(0), h = input.dim(1), w = input.dim(2), s = input.dim(4);
  const int64_t co = w_shape[0], kh = w_shape[1], kw = w_shape[2], ci = w_shape[3];
  const int64_t ho = ops::conv_out_extent(h, kh, spec.stride, spec.pad);
  const int64_t wo = ops::conv_out_extent(w, kw, spec.stride, spec.pad);
  const int64_t outputs = b * ho * wo * co * s;

  if (mode_ == Mode::Snn && binary_input) {
    // one addition per (active spike) x (window it feeds) x (output channel)
    Tensor64 mult = ops::conv_window_multiplicity(h, w, kh, kw, spec);
    double weighted = 0;
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t p = 0; p < h * w; ++p) {
        const float* site = input.ptr() + (bi * h * w + p) * ci * s;
        int64_t ones = 0;
        for (int64_t i = 0; i < ci * s; ++i)
          if (site[i] != 0.0f) ++ones;
        weighted += static_cast<double>(ones) * mult[p];
      }
    record(name, 0, static_cast<int64_t>(weighted) * co);
  } else {
    const int64_t macs = outputs * kh * kw * ci;
    record(name, macs, macs);
  }
  if (has_bias) record(name + ".bias", 0, outputs);
}

void OpCounter::pooled_conv(const std::string& name, const Tensor& input, int64_t out_channels,
                            bool binary_input, bool has_bias) {
  const int64_t b = input.dim(0), h = input.dim(1), w = input.dim(2), ci = input.dim(3),
                s = input.dim(4);
  const int64_t outputs = b * (h / 2) * (w / 2) * out_channels * s;
  if (mode_ == Mode::Snn && binary_input) {
    // tied-weight strided synapse: every spike lands in exactly one window
    int64_t ones = count_ones(input);
    record(name, 0, ones + ones * out_channels);
  } else {
    const int64_t pooled = b * (h / 2) * (w / 2) * ci * s;
    const int64_t macs = outputs * ci;
    // 3 adds + 1 scale per pooled element, then the dense 1x1 conv
    record(name, pooled + macs, 3 * pooled + macs);
  }
  if (has_bias) record(name + ".bias", 0, outputs);
}

void OpCounter::linear(const std::string& name, const Tensor& input, const Shape& w_shape,
                       bool binary_input, bool has_bias) {
  const int64_t b = input.dim(0), s = input.dim(2);
  const int64_t fo = w_shape[0], fi = w_shape[1];
  const int64_t outputs = b * fo * s;
  if (mode_ == Mode::Snn && binary_input) {
    record(name, 0, count_ones(input) * fo);
  } else {
    const int64_t macs = outputs * fi;
    record(name, macs, macs);
  }
  if (has_bias) record(name + ".bias", 0, outputs);
}

void OpCounter::tdbn(const std::string& name, int64_t elements) {
  // folded per-channel affine at inference: 1 mul + 1 add per element
  record(name, elements, elements);
}

void OpCounter::lif(const std::string& name, int64_t elements) {
  if (mode_ == Mode::Ann) return;  // the dense twin uses a plain activation
  record(name, elements, elements);
}

void OpCounter::elementwise(const std::string& name, int64_t muls, int64_t adds) {
  record(name, muls, adds);
}

int64_t OpCounter::total_muls() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.muls;
  return n;
}
int64_t OpCounter::total_adds() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.adds;
  return n;
}

std::string OpCountReport::table() const {
  char line[256];
  std::snprintf(line, sizeof(line), "  %-28s %16s %16s\n", "layer", "muls", "adds");
  std::string out = str("mode: ", mode == OpCounter::Mode::Snn ? "snn" : "ann", "\n", line);
  for (const auto& e : breakdown) {
    std::snprintf(line, sizeof(line), "  %-28s %16lld %16lld\n", e.name.c_str(),
                  static_cast<long long>(e.muls), static_cast<long long>(e.adds));
    out += line;
  }
  std::snprintf(line, sizeof(line), "  %-28s %16lld %16lld\n", "per-denoising-step",
                static_cast<long long>(step_muls), static_cast<long long>(step_adds));
  out += line;
  std::snprintf(line, sizeof(line), "  %-28s %16lld %16lld   (%d steps)\n", "per-image",
                static_cast<long long>(image_muls), static_cast<long long>(image_adds),
                num_steps);
  out += line;
  return out;
}

std::string OpCountReport::key_values() const {
  return str("mode=", mode == OpCounter::Mode::Snn ? "snn" : "ann", " step_muls=", step_muls,
             " step_adds=", step_adds, " steps=", num_steps, " image_muls=", image_muls,
             " image_adds=", image_adds, "\n");
}

OpCountReport count_ops(ModelParams& params, const UNetConfig& cfg, OpCounter::Mode mode,
                        const Tensor& image_batch, int t, int num_steps) {
  SPD_REQUIRE(image_batch.rank() == 4, "count_ops: image batch must be (B,H,W,C)");
  UNetConfig run_cfg = cfg;
  if (mode == OpCounter::Mode::Ann) run_cfg.neuron.num_steps = 1;  // dense twin, no time unroll
  const int64_t steps = run_cfg.neuron.num_steps;

  OpCounter counter(mode);
  Tape tape(false);
  Val signal = encode_direct(tape, tape.leaf(image_batch), steps);
  ForwardOptions opts;
  opts.counter = &counter;
  unet_forward(tape, params, run_cfg, signal, {t}, opts);

  // the DDIM linear combination a x' + b y per signal element
  const int64_t sig_elems = image_batch.numel() * steps;
  counter.elementwise("ddim_step", 2 * sig_elems, sig_elems);

  OpCountReport rep;
  rep.mode = mode;
  rep.breakdown = counter.breakdown();
  rep.step_muls = counter.total_muls();
  rep.step_adds = counter.total_adds();
  rep.num_steps = num_steps;
  rep.image_muls = rep.step_muls * num_steps;
  rep.image_adds = rep.step_adds * num_steps;
  if (mode == OpCounter::Mode::Snn) {
    // final decode: mean over S per pixel
    rep.image_adds += image_batch.numel() * (steps - 1);
    rep.image_muls += image_batch.numel();
  }
  return rep;
}

}  // namespace spikediff
