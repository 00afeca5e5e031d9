#pragma once

#include "spikediff/tape.hpp"

namespace spikediff {
namespace ops {

struct Conv2dSpec {
  int stride = 1;
  int pad = 1;
};

// ---- Taped primitives ------------------------------------------------------
//
// Shape conventions:
//   rank-5 signal  (B, H, W, C, S)   S is the SNN time axis, innermost
//   rank-3 feature (B, F, S)
//   rank-4 image   (B, H, W, C)
//
// conv2d / avgpool / upsample act per time step with shared weights;
// linear likewise. Every function validates its shape rule and names the
// offending extents on failure.

// x (B,H,W,Ci,S), w (Co,kh,kw,Ci), optional bias (Co) -> (B,Ho,Wo,Co,S)
template <typename T>
Val conv2d(TapeT<T>& tape, Val x, Val w, Val bias, Conv2dSpec spec);

// x (B,Fi,S), w (Fo,Fi), optional bias (Fo) -> (B,Fo,S)
template <typename T>
Val linear(TapeT<T>& tape, Val x, Val w, Val bias);

template <typename T>
Val avgpool2x2(TapeT<T>& tape, Val x);

template <typename T>
Val upsample_nearest2x(TapeT<T>& tape, Val x);

template <typename T>
Val add(TapeT<T>& tape, Val a, Val b);

template <typename T>
Val mul(TapeT<T>& tape, Val a, Val b);

template <typename T>
Val scale(TapeT<T>& tape, Val x, double c);

// concatenates along the channel axis (rank-5: axis 3)
template <typename T>
Val concat_channels(TapeT<T>& tape, const std::vector<Val>& xs);

// expands axes where the source extent is 1 (ranks must match)
template <typename T>
Val broadcast_to(TapeT<T>& tape, Val x, Shape target);

template <typename T>
Val reshape(TapeT<T>& tape, Val x, Shape target);

// mean over all elements -> shape {1}
template <typename T>
Val reduce_mean_all(TapeT<T>& tape, Val x);

// mean over the trailing S axis: (..., S) -> (...)
template <typename T>
Val reduce_mean_time(TapeT<T>& tape, Val x);

// replicate along a new trailing S axis: (...) -> (..., S)
template <typename T>
Val replicate_time(TapeT<T>& tape, Val x, int64_t steps);

template <typename T>
Val relu(TapeT<T>& tape, Val x);

// Heaviside step at v_th. Backward substitutes the triangular surrogate
// max(1 - |u - v_th|/width, 0) for the true zero-a.e. derivative.
template <typename T>
Val spike_threshold(TapeT<T>& tape, Val u, double v_th, double width);

// ---- Raw kernels (no tape) -------------------------------------------------
// The taped primitives and the samplers share these.

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                          Conv2dSpec spec);
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, Conv2dSpec spec,
                     const TensorT<T>& dy, TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* dbias);

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias);

template <typename T>
TensorT<T> avgpool2x2_forward(const TensorT<T>& x);

template <typename T>
TensorT<T> upsample_nearest2x_forward(const TensorT<T>& x);

template <typename T>
TensorT<T> replicate_time_forward(const TensorT<T>& x, int64_t steps);

template <typename T>
TensorT<T> reduce_mean_time_forward(const TensorT<T>& x);

// out-shape helper shared by conv2d and the fusion transform
int64_t conv_out_extent(int64_t in, int64_t k, int stride, int pad);

// number of sliding windows that touch each input site, as a (H,W) table
Tensor64 conv_window_multiplicity(int64_t h, int64_t w, int64_t kh, int64_t kw, Conv2dSpec spec);

}  // namespace ops
}  // namespace spikediff
