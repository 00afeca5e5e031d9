#pragma once

#include "spikediff/ops.hpp"
#include "spikediff/tensor.hpp"

namespace spikediff {

// Dynamic addition/multiplication accounting. Spike-driven synapses cost one
// addition per active spike and no multiplications; real-valued operands cost
// one multiplication and one addition per multiply-accumulate. Bias additions
// are counted once per output element in both modes. The Ann mode treats every
// activation as real-valued (the dense equivalent of the same architecture).
class OpCounter {
 public:
  enum class Mode { Snn, Ann };

  explicit OpCounter(Mode mode) : mode_(mode) {}

  Mode mode() const { return mode_; }

  void conv(const std::string& name, const Tensor& input, const Shape& w_shape,
            ops::Conv2dSpec spec, bool binary_input, bool has_bias);
  // downsampling composite: 2x2 sum-pool then 1x1 conv, counted as a
  // tied-weight strided synapse layer on the raw spikes
  void pooled_conv(const std::string& name, const Tensor& input, int64_t out_channels,
                   bool binary_input, bool has_bias);
  void linear(const std::string& name, const Tensor& input, const Shape& w_shape,
              bool binary_input, bool has_bias);
  void tdbn(const std::string& name, int64_t elements);
  // mul/add per element-step of the membrane update; skipped in Ann mode
  void lif(const std::string& name, int64_t elements);
  void elementwise(const std::string& name, int64_t muls, int64_t adds);

  struct Entry {
    std::string name;
    int64_t muls = 0;
    int64_t adds = 0;
  };

  const std::vector<Entry>& breakdown() const { return entries_; }
  int64_t total_muls() const;
  int64_t total_adds() const;

 private:
  void record(const std::string& name, int64_t muls, int64_t adds);
  static int64_t count_ones(const Tensor& t);

  Mode mode_;
  std::vector<Entry> entries_;
};

struct OpCountReport {
  OpCounter::Mode mode = OpCounter::Mode::Snn;
  // one full network evaluation plus the step's linear combination
  int64_t step_muls = 0;
  int64_t step_adds = 0;
  // a whole trajectory: num_steps denoising steps plus the final decode
  int num_steps = 1;
  int64_t image_muls = 0;
  int64_t image_adds = 0;
  std::vector<OpCounter::Entry> breakdown;  // per-step scope

  std::string table() const;      // aligned text table
  std::string key_values() const; // machine-readable lines
};

}  // namespace spikediff
