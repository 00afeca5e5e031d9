#pragma once

// Shared test oracles. Everything here is independent of the library's
// forward/backward paths it is used to check: the convolution oracle is a
// direct loop-nest sum, the gradient oracle is central finite differences.

#include <cmath>
#include <functional>

#include "spikediff/ops.hpp"
#include "spikediff/rng.hpp"
#include "spikediff/tape.hpp"

namespace spikediff {
namespace testing {

// direct convolution sum, (B,H,W,Ci,S) x (Co,kh,kw,Ci) -> (B,Ho,Wo,Co,S)
template <typename T>
TensorT<T> conv2d_bruteforce(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                             ops::Conv2dSpec spec) {
  int64_t b = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3), s = x.dim(4);
  int64_t co = w.dim(0), kh = w.dim(1), kw = w.dim(2);
  int64_t ho = ops::conv_out_extent(h, kh, spec.stride, spec.pad);
  int64_t wo = ops::conv_out_extent(wd, kw, spec.stride, spec.pad);
  TensorT<T> y({b, ho, wo, co, s});
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t oh = 0; oh < ho; ++oh)
      for (int64_t ow = 0; ow < wo; ++ow)
        for (int64_t oc = 0; oc < co; ++oc)
          for (int64_t si = 0; si < s; ++si) {
            double acc = bias ? static_cast<double>((*bias)[oc]) : 0.0;
            for (int64_t r = 0; r < kh; ++r)
              for (int64_t c = 0; c < kw; ++c)
                for (int64_t ic = 0; ic < ci; ++ic) {
                  int64_t ih = oh * spec.stride - spec.pad + r;
                  int64_t iw = ow * spec.stride - spec.pad + c;
                  if (ih < 0 || ih >= h || iw < 0 || iw >= wd) continue;
                  acc += static_cast<double>(x.at({bi, ih, iw, ic, si})) *
                         static_cast<double>(w.at({oc, r, c, ic}));
                }
            y.at({bi, oh, ow, oc, si}) = static_cast<T>(acc);
          }
  return y;
}

// Central-difference gradient oracle in 64-bit. `build` must construct the
// scalar loss from leaves bound in order; the analytic gradients of every
// input are compared against (f(x+h) - f(x-h)) / 2h elementwise.
struct GradCheckResult {
  double max_rel_err = 0;
  int64_t checked = 0;
};

inline GradCheckResult check_gradients(
    std::vector<Tensor64> inputs,
    const std::function<Val(Tape64&, const std::vector<Val>&)>& build, double step = 1e-5,
    double rel_tol = 1e-4) {
  // analytic pass
  Tape64 tape;
  std::vector<Val> vals;
  for (const auto& in : inputs) vals.push_back(tape.leaf(in, true));
  Val loss = build(tape, vals);
  SPD_REQUIRE(tape.value(loss).numel() == 1, "gradcheck: loss must be scalar");
  tape.backward(loss);
  std::vector<Tensor64> grads;
  for (Val v : vals) grads.push_back(tape.grad(v));

  auto eval = [&](const std::vector<Tensor64>& xs) {
    Tape64 t2(false);
    std::vector<Val> vs;
    for (const auto& x : xs) vs.push_back(t2.leaf(x, false));
    return t2.value(build(t2, vs))[0];
  };

  GradCheckResult res;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      std::vector<Tensor64> xs = inputs;
      double orig = xs[k][i];
      xs[k][i] = orig + step;
      double up = eval(xs);
      xs[k][i] = orig - step;
      double down = eval(xs);
      double fd = (up - down) / (2 * step);
      double g = grads[k][i];
      double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
      double rel = std::abs(fd - g) / denom;
      if (std::abs(fd - g) < 1e-9) rel = 0;  // both effectively zero
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.checked++;
    }
  }
  SPD_REQUIRE(res.max_rel_err < rel_tol, "gradcheck: max rel err ", res.max_rel_err,
              " exceeds ", rel_tol);
  return res;
}

// Soft-disc images on a black background, deterministic in the seed.
// Values land in [-1, 1] with most pixels at exactly -1.
inline Tensor make_blob_dataset(int64_t n, int64_t size, uint64_t seed) {
  Rng rng(seed);
  Tensor out = Tensor::full({n, size, size, 1}, -1.0f);
  for (int64_t i = 0; i < n; ++i) {
    int blobs = rng.uniform() < 0.35 ? 2 : 1;
    for (int k = 0; k < blobs; ++k) {
      double cx = rng.uniform(3.0, static_cast<double>(size) - 3.0);
      double cy = rng.uniform(3.0, static_cast<double>(size) - 3.0);
      double r = rng.uniform(1.8, 4.2);
      double amp = rng.uniform(0.6, 1.0);
      for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
          double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
          double v = amp * std::clamp(r - d + 0.5, 0.0, 1.0);
          float& px = out.at({i, y, x, 0});
          px = std::min(1.0f, px + static_cast<float>(2.0 * v));
        }
    }
  }
  return out;
}

inline Tensor64 random_tensor64(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(s));
  rng.fill_uniform(t, lo, hi);
  return t;
}

}  // namespace testing
}  // namespace spikediff
