#pragma once

#include "spikediff/ops.hpp"
#include "spikediff/tape.hpp"

namespace spikediff {

struct NeuronConfig {
  float v_threshold = 1.0f;
  float tau_decay = 0.8f;
  float surrogate_width = 1.0f;   // half-width of the triangular surrogate
  int num_steps = 4;              // S

  void validate() const {
    SPD_REQUIRE(v_threshold > 0, "neuron: v_threshold must be > 0, got ", v_threshold);
    SPD_REQUIRE(tau_decay >= 0 && tau_decay < 1, "neuron: tau_decay must be in [0,1), got ",
                tau_decay);
    SPD_REQUIRE(surrogate_width > 0, "neuron: surrogate_width must be > 0, got ",
                surrogate_width);
    SPD_REQUIRE(num_steps >= 1, "neuron: num_steps must be >= 1, got ", num_steps);
  }
};

enum class SignalKind { Current, Spike };

// (B,H,W,C,S) value array tagged with what its values mean. Spikes are binary.
template <typename T>
struct SignalTensorT {
  TensorT<T> values;
  SignalKind kind = SignalKind::Current;

  bool is_binary() const {
    for (T v : values.data)
      if (v != T(0) && v != T(1)) return false;
    return true;
  }
};
using SignalTensor = SignalTensorT<float>;

// Membrane potentials and last emitted spikes of one layer, per neuron.
template <typename T>
struct LifStateT {
  TensorT<T> membrane;
  TensorT<T> last_spike;

  static LifStateT resting(Shape s) {
    return LifStateT{TensorT<T>::zeros(s), TensorT<T>::zeros(s)};
  }
};
using LifState = LifStateT<float>;

// One membrane update: u <- tau * u_prev * (1 - o_prev) + I, spike at u >= V_th,
// reset to zero. Returns the new state and the spike tensor.
template <typename T>
std::pair<LifStateT<T>, TensorT<T>> lif_step(const LifStateT<T>& state,
                                             const TensorT<T>& input_current,
                                             const NeuronConfig& cfg);

// max(1 - |u - V_th| / a, 0), elementwise
template <typename T>
TensorT<T> surrogate_grad(const TensorT<T>& u, const NeuronConfig& cfg);

// Taped LIF unrolled over the trailing S axis of a current signal
// (B,...,S) -> binary spikes of the same shape. Backward runs the BPTT
// recursion with the surrogate at the threshold and the reset factor
// (1 - o_prev) detached, matching per-step lif_step composition.
template <typename T>
Val lif(TapeT<T>& tape, Val currents, const NeuronConfig& cfg);

constexpr double kTdBnEps = 1e-5;
constexpr double kTdBnMomentum = 0.1;

// Threshold-dependent batch norm: per channel over (batch, spatial, time),
// y = gamma * V_th * (x - mu) / sqrt(var + eps) + beta.
// Rank-5 input normalizes channel axis 3; rank-3 input normalizes axis 1.
// Train mode uses batch statistics and updates the running tensors (shape (C),
// float regardless of T); eval mode reads them.
template <typename T>
Val tdbn(TapeT<T>& tape, Val x, Val gamma, Val beta, Tensor& running_mean, Tensor& running_var,
         const NeuronConfig& cfg, bool train, double momentum = kTdBnMomentum,
         double eps = kTdBnEps);

// Direct input encoding: replicate each pixel S times along the time axis.
template <typename T>
Val encode_direct(TapeT<T>& tape, Val image, int64_t steps);
template <typename T>
TensorT<T> encode_direct(const TensorT<T>& image, int64_t steps);

// Average decoding: mean over the time axis.
template <typename T>
Val decode_average(TapeT<T>& tape, Val signal);
template <typename T>
TensorT<T> decode_average(const TensorT<T>& signal);

// Weighted spike aggregation (conv / linear applied independently per time
// step). Rejects current-valued inputs: currents feed LIF units, not synapses.
template <typename T>
SignalTensorT<T> synaptic_current(const SignalTensorT<T>& spikes, const TensorT<T>& weight,
                                  const TensorT<T>* bias, ops::Conv2dSpec spec);
template <typename T>
SignalTensorT<T> synaptic_current(const SignalTensorT<T>& spikes, const TensorT<T>& weight,
                                  const TensorT<T>* bias);

}  // namespace spikediff
