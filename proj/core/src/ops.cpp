#include "spikediff/ops.hpp"

#include <cstring>
#include <memory>

#include "gemm.hpp"

namespace spikediff {
namespace ops {

int64_t conv_out_extent(int64_t in, int64_t k, int stride, int pad) {
  int64_t span = in + 2 * pad - k;
  SPD_REQUIRE(span >= 0, "conv2d: kernel ", k, " larger than padded input ", in + 2 * pad);
  return span / stride + 1;
}

namespace {

template <typename T>
struct ConvDims {
  int64_t b, h, w, ci, s;       // input
  int64_t co, kh, kw;           // kernel
  int64_t ho, wo;               // output
  int64_t rows, cols;           // im2col matrix

  ConvDims(const TensorT<T>& x, const TensorT<T>& wt, Conv2dSpec spec) {
    SPD_REQUIRE(x.rank() == 5, "conv2d: input must be rank-5 (B,H,W,C,S), got ",
                shape_str(x.shape));
    SPD_REQUIRE(wt.rank() == 4, "conv2d: kernel must be rank-4 (Co,kh,kw,Ci), got ",
                shape_str(wt.shape));
    b = x.dim(0); h = x.dim(1); w = x.dim(2); ci = x.dim(3); s = x.dim(4);
    co = wt.dim(0); kh = wt.dim(1); kw = wt.dim(2);
    SPD_REQUIRE(wt.dim(3) == ci, "conv2d: kernel expects ", wt.dim(3), " input channels, input has ",
                ci);
    SPD_REQUIRE(spec.stride >= 1, "conv2d: stride must be >= 1, got ", spec.stride);
    SPD_REQUIRE(spec.pad >= 0, "conv2d: padding must be >= 0, got ", spec.pad);
    ho = conv_out_extent(h, kh, spec.stride, spec.pad);
    wo = conv_out_extent(w, kw, spec.stride, spec.pad);
    rows = kh * kw * ci;
    cols = ho * wo * s;
  }
};

// col is (kh*kw*ci) x (ho*wo*s) row-major; row order (r, cl, ci) matches the
// kernel layout (Co, kh, kw, Ci) so the kernel can be used as a GEMM operand
// without repacking. S runs are contiguous on both sides.
template <typename T>
void im2col(const TensorT<T>& x, int64_t bi, const ConvDims<T>& d, Conv2dSpec spec, T* col) {
  const int64_t sw = d.ci * d.s;
  const int64_t sh = d.w * sw;
  const T* xb = x.ptr() + bi * d.h * sh;
  const size_t srun = static_cast<size_t>(d.s) * sizeof(T);
  for (int64_t r = 0; r < d.kh; ++r) {
    for (int64_t cl = 0; cl < d.kw; ++cl) {
      for (int64_t c = 0; c < d.ci; ++c) {
        T* dst = col + ((r * d.kw + cl) * d.ci + c) * d.cols;
        for (int64_t oh = 0; oh < d.ho; ++oh) {
          int64_t ih = oh * spec.stride - spec.pad + r;
          if (ih < 0 || ih >= d.h) {
            std::memset(dst, 0, static_cast<size_t>(d.wo) * srun);
            dst += d.wo * d.s;
            continue;
          }
          for (int64_t ow = 0; ow < d.wo; ++ow) {
            int64_t iw = ow * spec.stride - spec.pad + cl;
            if (iw < 0 || iw >= d.w) {
              std::memset(dst, 0, srun);
            } else {
              std::memcpy(dst, xb + ih * sh + iw * sw + c * d.s, srun);
            }
            dst += d.s;
          }
        }
      }
    }
  }
}

// scatter-add transpose of im2col
template <typename T>
void col2im_add(const T* col, int64_t bi, const ConvDims<T>& d, Conv2dSpec spec, TensorT<T>& dx) {
  const int64_t sw = d.ci * d.s;
  const int64_t sh = d.w * sw;
  T* xb = dx.ptr() + bi * d.h * sh;
  for (int64_t r = 0; r < d.kh; ++r) {
    for (int64_t cl = 0; cl < d.kw; ++cl) {
      for (int64_t c = 0; c < d.ci; ++c) {
        const T* src = col + ((r * d.kw + cl) * d.ci + c) * d.cols;
        for (int64_t oh = 0; oh < d.ho; ++oh) {
          int64_t ih = oh * spec.stride - spec.pad + r;
          if (ih < 0 || ih >= d.h) {
            src += d.wo * d.s;
            continue;
          }
          for (int64_t ow = 0; ow < d.wo; ++ow) {
            int64_t iw = ow * spec.stride - spec.pad + cl;
            if (iw >= 0 && iw < d.w) {
              T* dst = xb + ih * sh + iw * sw + c * d.s;
              for (int64_t s = 0; s < d.s; ++s) dst[s] += src[s];
            }
            src += d.s;
          }
        }
      }
    }
  }
}

// out_mat (co x cols) row-major -> y[b,oh,ow,co,s], adding bias
template <typename T>
void scatter_out(const T* out_mat, int64_t bi, const ConvDims<T>& d, const TensorT<T>* bias,
                 TensorT<T>& y) {
  T* yb = y.ptr() + bi * d.ho * d.wo * d.co * d.s;
  for (int64_t co = 0; co < d.co; ++co) {
    const T bv = bias ? (*bias)[co] : T(0);
    const T* src = out_mat + co * d.cols;
    for (int64_t p = 0; p < d.ho * d.wo; ++p) {
      T* dst = yb + (p * d.co + co) * d.s;
      for (int64_t s = 0; s < d.s; ++s) dst[s] = src[p * d.s + s] + bv;
    }
  }
}

// gather transpose of scatter_out (without bias)
template <typename T>
void gather_out(const TensorT<T>& dy, int64_t bi, const ConvDims<T>& d, T* out_mat) {
  const T* yb = dy.ptr() + bi * d.ho * d.wo * d.co * d.s;
  for (int64_t co = 0; co < d.co; ++co) {
    T* dst = out_mat + co * d.cols;
    for (int64_t p = 0; p < d.ho * d.wo; ++p) {
      const T* src = yb + (p * d.co + co) * d.s;
      for (int64_t s = 0; s < d.s; ++s) dst[p * d.s + s] = src[s];
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                          Conv2dSpec spec) {
  ConvDims<T> d(x, w, spec);
  if (bias)
    SPD_REQUIRE(bias->rank() == 1 && bias->dim(0) == d.co, "conv2d: bias shape ",
                shape_str(bias->shape), " does not match ", d.co, " output channels");
  TensorT<T> y({d.b, d.ho, d.wo, d.co, d.s});
  parallel_for(d.b, [&](int64_t bi) {
    std::unique_ptr<T[]> col(new T[static_cast<size_t>(d.rows * d.cols)]);
    std::unique_ptr<T[]> out(new T[static_cast<size_t>(d.co * d.cols)]);
    im2col(x, bi, d, spec, col.get());
    detail::gemm(false, d.co, d.cols, d.rows, w.ptr(), col.get(), out.get());
    scatter_out(out.get(), bi, d, bias, y);
  });
  return y;
}

template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& w, Conv2dSpec spec,
                     const TensorT<T>& dy, TensorT<T>* dx, TensorT<T>* dw, TensorT<T>* dbias) {
  ConvDims<T> d(x, w, spec);
  SPD_REQUIRE(dy.shape == Shape({d.b, d.ho, d.wo, d.co, d.s}), "conv2d backward: dy shape ",
              shape_str(dy.shape), " does not match output");
  if (dx || dw) {
    if (dx) *dx = TensorT<T>::zeros(x.shape);
    // dw: per-chunk partials summed in chunk order keep the result
    // independent of the worker count actually running
    std::vector<TensorT<T>> partial;
    if (dw)
      partial.assign(static_cast<size_t>(worker_count()), TensorT<T>::zeros(w.shape));
    int used = parallel_chunks(d.b, [&](int chunk, int64_t lo, int64_t hi) {
      std::unique_ptr<T[]> col(new T[static_cast<size_t>(d.rows * d.cols)]);
      std::unique_ptr<T[]> dymat(new T[static_cast<size_t>(d.co * d.cols)]);
      std::unique_ptr<T[]> dcol(dx ? new T[static_cast<size_t>(d.rows * d.cols)] : nullptr);
      for (int64_t bi = lo; bi < hi; ++bi) {
        gather_out(dy, bi, d, dymat.get());
        if (dw) {
          im2col(x, bi, d, spec, col.get());
          detail::gemm_bt(true, d.co, d.rows, d.cols, dymat.get(), col.get(),
                          partial[static_cast<size_t>(chunk)].ptr());
        }
        if (dx) {
          detail::gemm_at(false, d.rows, d.cols, d.co, w.ptr(), dymat.get(), dcol.get());
          col2im_add(dcol.get(), bi, d, spec, *dx);
        }
      }
    });
    if (dw) {
      *dw = TensorT<T>::zeros(w.shape);
      for (int c = 0; c < used; ++c)
        for (int64_t i = 0; i < dw->numel(); ++i)
          (*dw)[i] += partial[static_cast<size_t>(c)][i];
    }
  }
  if (dbias) {
    *dbias = TensorT<T>::zeros({d.co});
    const T* p = dy.ptr();
    for (int64_t i = 0; i < d.b * d.ho * d.wo; ++i)
      for (int64_t co = 0; co < d.co; ++co)
        for (int64_t s = 0; s < d.s; ++s) (*dbias)[co] += *p++;
  }
}

template <typename T>
TensorT<T> linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias) {
  SPD_REQUIRE(x.rank() == 3, "linear: input must be rank-3 (B,F,S), got ", shape_str(x.shape));
  SPD_REQUIRE(w.rank() == 2, "linear: weight must be rank-2 (Fo,Fi), got ", shape_str(w.shape));
  int64_t b = x.dim(0), fi = x.dim(1), s = x.dim(2), fo = w.dim(0);
  SPD_REQUIRE(w.dim(1) == fi, "linear: weight expects ", w.dim(1), " features, input has ", fi);
  if (bias)
    SPD_REQUIRE(bias->rank() == 1 && bias->dim(0) == fo, "linear: bias shape ",
                shape_str(bias->shape), " does not match ", fo, " outputs");
  TensorT<T> y({b, fo, s});
  for (int64_t bi = 0; bi < b; ++bi) {
    detail::gemm(false, fo, s, fi, w.ptr(), x.ptr() + bi * fi * s, y.ptr() + bi * fo * s);
    if (bias) {
      T* yb = y.ptr() + bi * fo * s;
      for (int64_t f = 0; f < fo; ++f)
        for (int64_t si = 0; si < s; ++si) yb[f * s + si] += (*bias)[f];
    }
  }
  return y;
}

template <typename T>
TensorT<T> avgpool2x2_forward(const TensorT<T>& x) {
  SPD_REQUIRE(x.rank() == 5, "avgpool2x2: input must be rank-5, got ", shape_str(x.shape));
  int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), s = x.dim(4);
  SPD_REQUIRE(h % 2 == 0 && w % 2 == 0, "avgpool2x2: spatial extents must be even, got ", h, "x",
              w);
  TensorT<T> y({b, h / 2, w / 2, c, s});
  int64_t run = c * s;
  parallel_for(b, [&](int64_t bi) {
    for (int64_t oh = 0; oh < h / 2; ++oh)
      for (int64_t ow = 0; ow < w / 2; ++ow) {
        const T* p00 = x.ptr() + (((bi * h + 2 * oh) * w + 2 * ow) * run);
        const T* p01 = p00 + run;
        const T* p10 = p00 + w * run;
        const T* p11 = p10 + run;
        T* dst = y.ptr() + ((bi * (h / 2) + oh) * (w / 2) + ow) * run;
        for (int64_t i = 0; i < run; ++i)
          dst[i] = (p00[i] + p01[i] + p10[i] + p11[i]) * T(0.25);
      }
  });
  return y;
}

template <typename T>
TensorT<T> upsample_nearest2x_forward(const TensorT<T>& x) {
  SPD_REQUIRE(x.rank() == 5, "upsample2x: input must be rank-5, got ", shape_str(x.shape));
  int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), s = x.dim(4);
  TensorT<T> y({b, 2 * h, 2 * w, c, s});
  int64_t run = c * s;
  size_t bytes = static_cast<size_t>(run) * sizeof(T);
  parallel_for(b, [&](int64_t bi) {
    for (int64_t ih = 0; ih < h; ++ih)
      for (int64_t iw = 0; iw < w; ++iw) {
        const T* src = x.ptr() + ((bi * h + ih) * w + iw) * run;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw2 = 0; dw2 < 2; ++dw2)
            std::memcpy(y.ptr() + ((bi * 2 * h + 2 * ih + dh) * 2 * w + 2 * iw + dw2) * run, src,
                        bytes);
      }
  });
  return y;
}

template <typename T>
TensorT<T> replicate_time_forward(const TensorT<T>& x, int64_t steps) {
  SPD_REQUIRE(steps >= 1, "replicate_time: steps must be >= 1, got ", steps);
  Shape out_shape = x.shape;
  out_shape.push_back(steps);
  TensorT<T> y(out_shape);
  for (int64_t i = 0; i < x.numel(); ++i)
    for (int64_t s = 0; s < steps; ++s) y[i * steps + s] = x[i];
  return y;
}

template <typename T>
TensorT<T> reduce_mean_time_forward(const TensorT<T>& x) {
  SPD_REQUIRE(x.rank() >= 2, "reduce_mean_time: need a trailing time axis, got ",
              shape_str(x.shape));
  int64_t s = x.shape.back();
  Shape out_shape(x.shape.begin(), x.shape.end() - 1);
  TensorT<T> y(out_shape);
  T inv = T(1) / static_cast<T>(s);
  for (int64_t i = 0; i < y.numel(); ++i) {
    T acc = 0;
    const T* p = x.ptr() + i * s;
    for (int64_t k = 0; k < s; ++k) acc += p[k];
    y[i] = acc * inv;
  }
  return y;
}

Tensor64 conv_window_multiplicity(int64_t h, int64_t w, int64_t kh, int64_t kw, Conv2dSpec spec) {
  int64_t ho = conv_out_extent(h, kh, spec.stride, spec.pad);
  int64_t wo = conv_out_extent(w, kw, spec.stride, spec.pad);
  Tensor64 m({h, w});
  for (int64_t oh = 0; oh < ho; ++oh)
    for (int64_t ow = 0; ow < wo; ++ow)
      for (int64_t r = 0; r < kh; ++r) {
        int64_t ih = oh * spec.stride - spec.pad + r;
        if (ih < 0 || ih >= h) continue;
        for (int64_t cl = 0; cl < kw; ++cl) {
          int64_t iw = ow * spec.stride - spec.pad + cl;
          if (iw >= 0 && iw < w) m.at({ih, iw}) += 1.0;
        }
      }
  return m;
}

// ---- taped primitives -------------------------------------------------------

template <typename T>
Val conv2d(TapeT<T>& tape, Val x, Val w, Val bias, Conv2dSpec spec) {
  const TensorT<T>* bp = bias.valid() ? &tape.value(bias) : nullptr;
  TensorT<T> y = conv2d_forward(tape.value(x), tape.value(w), bp, spec);
  bool need = tape.requires_grad(x) || tape.requires_grad(w) ||
              (bias.valid() && tape.requires_grad(bias));
  return tape.emit(std::move(y),
                   [x, w, bias, spec](TapeT<T>& t, const TensorT<T>& dy) {
                     bool nx = t.requires_grad(x);
                     bool nw = t.requires_grad(w);
                     bool nb = bias.valid() && t.requires_grad(bias);
                     TensorT<T> dx, dw, db;
                     conv2d_backward(t.value(x), t.value(w), spec, dy, nx ? &dx : nullptr,
                                     nw ? &dw : nullptr, nb ? &db : nullptr);
                     if (nx) t.accumulate(x, std::move(dx));
                     if (nw) t.accumulate(w, std::move(dw));
                     if (nb) t.accumulate(bias, std::move(db));
                   },
                   need);
}

template <typename T>
Val linear(TapeT<T>& tape, Val x, Val w, Val bias) {
  const TensorT<T>* bp = bias.valid() ? &tape.value(bias) : nullptr;
  TensorT<T> y = linear_forward(tape.value(x), tape.value(w), bp);
  bool need = tape.requires_grad(x) || tape.requires_grad(w) ||
              (bias.valid() && tape.requires_grad(bias));
  return tape.emit(std::move(y),
                   [x, w, bias](TapeT<T>& t, const TensorT<T>& dy) {
                     const TensorT<T>& xv = t.value(x);
                     const TensorT<T>& wv = t.value(w);
                     int64_t b = xv.dim(0), fi = xv.dim(1), s = xv.dim(2), fo = wv.dim(0);
                     if (t.requires_grad(x)) {
                       TensorT<T> dx(xv.shape);
                       for (int64_t bi = 0; bi < b; ++bi)
                         detail::gemm_at(false, fi, s, fo, wv.ptr(), dy.ptr() + bi * fo * s,
                                         dx.ptr() + bi * fi * s);
                       t.accumulate(x, std::move(dx));
                     }
                     if (t.requires_grad(w)) {
                       TensorT<T> dw = TensorT<T>::zeros(wv.shape);
                       for (int64_t bi = 0; bi < b; ++bi)
                         detail::gemm_bt(true, fo, fi, s, dy.ptr() + bi * fo * s,
                                         xv.ptr() + bi * fi * s, dw.ptr());
                       t.accumulate(w, std::move(dw));
                     }
                     if (bias.valid() && t.requires_grad(bias)) {
                       TensorT<T> db = TensorT<T>::zeros({fo});
                       for (int64_t bi = 0; bi < b; ++bi)
                         for (int64_t f = 0; f < fo; ++f)
                           for (int64_t si = 0; si < s; ++si) db[f] += dy[(bi * fo + f) * s + si];
                       t.accumulate(bias, std::move(db));
                     }
                   },
                   need);
}

template <typename T>
Val avgpool2x2(TapeT<T>& tape, Val x) {
  TensorT<T> y = avgpool2x2_forward(tape.value(x));
  return tape.emit(std::move(y),
                   [x](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     const TensorT<T>& xv = t.value(x);
                     int64_t b = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
                     int64_t run = xv.dim(3) * xv.dim(4);
                     TensorT<T> dx(xv.shape);
                     for (int64_t bi = 0; bi < b; ++bi)
                       for (int64_t oh = 0; oh < h / 2; ++oh)
                         for (int64_t ow = 0; ow < w / 2; ++ow) {
                           const T* g = dy.ptr() + ((bi * (h / 2) + oh) * (w / 2) + ow) * run;
                           for (int dh = 0; dh < 2; ++dh)
                             for (int dw2 = 0; dw2 < 2; ++dw2) {
                               T* dst = dx.ptr() +
                                        (((bi * h + 2 * oh + dh) * w + 2 * ow + dw2) * run);
                               for (int64_t i = 0; i < run; ++i) dst[i] = g[i] * T(0.25);
                             }
                         }
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val upsample_nearest2x(TapeT<T>& tape, Val x) {
  TensorT<T> y = upsample_nearest2x_forward(tape.value(x));
  return tape.emit(std::move(y),
                   [x](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     const TensorT<T>& xv = t.value(x);
                     int64_t b = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
                     int64_t run = xv.dim(3) * xv.dim(4);
                     TensorT<T> dx = TensorT<T>::zeros(xv.shape);
                     for (int64_t bi = 0; bi < b; ++bi)
                       for (int64_t ih = 0; ih < h; ++ih)
                         for (int64_t iw = 0; iw < w; ++iw) {
                           T* dst = dx.ptr() + ((bi * h + ih) * w + iw) * run;
                           for (int dh = 0; dh < 2; ++dh)
                             for (int dw2 = 0; dw2 < 2; ++dw2) {
                               const T* g = dy.ptr() +
                                            ((bi * 2 * h + 2 * ih + dh) * 2 * w + 2 * iw + dw2) *
                                                run;
                               for (int64_t i = 0; i < run; ++i) dst[i] += g[i];
                             }
                         }
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val add(TapeT<T>& tape, Val a, Val b) {
  const TensorT<T>& av = tape.value(a);
  const TensorT<T>& bv = tape.value(b);
  SPD_REQUIRE(av.same_shape(bv), "add: shape mismatch ", shape_str(av.shape), " vs ",
              shape_str(bv.shape));
  TensorT<T> y(av.shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
  return tape.emit(std::move(y),
                   [a, b](TapeT<T>& t, const TensorT<T>& dy) {
                     if (t.requires_grad(a)) t.accumulate(a, dy);
                     if (t.requires_grad(b)) t.accumulate(b, dy);
                   },
                   tape.requires_grad(a) || tape.requires_grad(b));
}

template <typename T>
Val mul(TapeT<T>& tape, Val a, Val b) {
  const TensorT<T>& av = tape.value(a);
  const TensorT<T>& bv = tape.value(b);
  SPD_REQUIRE(av.same_shape(bv), "mul: shape mismatch ", shape_str(av.shape), " vs ",
              shape_str(bv.shape));
  TensorT<T> y(av.shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] * bv[i];
  return tape.emit(std::move(y),
                   [a, b](TapeT<T>& t, const TensorT<T>& dy) {
                     const TensorT<T>& av2 = t.value(a);
                     const TensorT<T>& bv2 = t.value(b);
                     if (t.requires_grad(a)) {
                       TensorT<T> da(av2.shape);
                       for (int64_t i = 0; i < da.numel(); ++i) da[i] = dy[i] * bv2[i];
                       t.accumulate(a, std::move(da));
                     }
                     if (t.requires_grad(b)) {
                       TensorT<T> db(bv2.shape);
                       for (int64_t i = 0; i < db.numel(); ++i) db[i] = dy[i] * av2[i];
                       t.accumulate(b, std::move(db));
                     }
                   },
                   tape.requires_grad(a) || tape.requires_grad(b));
}

template <typename T>
Val scale(TapeT<T>& tape, Val x, double c) {
  const TensorT<T>& xv = tape.value(x);
  TensorT<T> y(xv.shape);
  T cv = static_cast<T>(c);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = xv[i] * cv;
  return tape.emit(std::move(y),
                   [x, cv](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     TensorT<T> dx(dy.shape);
                     for (int64_t i = 0; i < dx.numel(); ++i) dx[i] = dy[i] * cv;
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val concat_channels(TapeT<T>& tape, const std::vector<Val>& xs) {
  SPD_REQUIRE(!xs.empty(), "concat: no inputs");
  const TensorT<T>& first = tape.value(xs[0]);
  SPD_REQUIRE(first.rank() == 5, "concat: inputs must be rank-5, got ", shape_str(first.shape));
  int64_t b = first.dim(0), h = first.dim(1), w = first.dim(2), s = first.dim(4);
  int64_t ctotal = 0;
  bool need = false;
  std::vector<int64_t> channels;
  for (Val v : xs) {
    const TensorT<T>& xv = tape.value(v);
    SPD_REQUIRE(xv.rank() == 5 && xv.dim(0) == b && xv.dim(1) == h && xv.dim(2) == w &&
                    xv.dim(4) == s,
                "concat: incompatible input shape ", shape_str(xv.shape), " vs ",
                shape_str(first.shape));
    channels.push_back(xv.dim(3));
    ctotal += xv.dim(3);
    need = need || tape.requires_grad(v);
  }
  TensorT<T> y({b, h, w, ctotal, s});
  int64_t sites = b * h * w;
  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const TensorT<T>& xv = tape.value(xs[k]);
    int64_t run = channels[k] * s;
    for (int64_t p = 0; p < sites; ++p)
      std::memcpy(y.ptr() + (p * ctotal + off) * s, xv.ptr() + p * run,
                  static_cast<size_t>(run) * sizeof(T));
    off += channels[k];
  }
  std::vector<Val> parents = xs;
  return tape.emit(std::move(y),
                   [parents, channels, b, h, w, s, ctotal](TapeT<T>& t, const TensorT<T>& dy) {
                     int64_t sites = b * h * w;
                     int64_t off = 0;
                     for (size_t k = 0; k < parents.size(); ++k) {
                       int64_t run = channels[k] * s;
                       if (t.requires_grad(parents[k])) {
                         TensorT<T> dx({b, h, w, channels[k], s});
                         for (int64_t p = 0; p < sites; ++p)
                           std::memcpy(dx.ptr() + p * run, dy.ptr() + (p * ctotal + off) * s,
                                       static_cast<size_t>(run) * sizeof(T));
                         t.accumulate(parents[k], dx);
                       }
                       off += channels[k];
                     }
                   },
                   need);
}

namespace {
// strides with 0 on expanded axes
inline std::vector<int64_t> broadcast_strides(const Shape& src, const Shape& dst) {
  SPD_REQUIRE(src.size() == dst.size(), "broadcast: rank mismatch ", shape_str(src), " vs ",
              shape_str(dst));
  std::vector<int64_t> strides(src.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(src.size()) - 1; i >= 0; --i) {
    strides[static_cast<size_t>(i)] = acc;
    acc *= src[static_cast<size_t>(i)];
  }
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i] == dst[i]) continue;
    SPD_REQUIRE(src[i] == 1, "broadcast: axis ", i, " has extent ", src[i],
                ", target ", dst[i], " (only extent-1 axes expand)");
    strides[i] = 0;
  }
  return strides;
}

template <typename T, typename Fn>
void for_each_broadcast(const Shape& dst, const std::vector<int64_t>& src_strides, Fn&& fn) {
  int rank = static_cast<int>(dst.size());
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  int64_t n = shape_numel(dst);
  int64_t src_off = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    fn(flat, src_off);
    for (int ax = rank - 1; ax >= 0; --ax) {
      idx[static_cast<size_t>(ax)]++;
      src_off += src_strides[static_cast<size_t>(ax)];
      if (idx[static_cast<size_t>(ax)] < dst[static_cast<size_t>(ax)]) break;
      src_off -= src_strides[static_cast<size_t>(ax)] * dst[static_cast<size_t>(ax)];
      idx[static_cast<size_t>(ax)] = 0;
    }
  }
}
}  // namespace

template <typename T>
Val broadcast_to(TapeT<T>& tape, Val x, Shape target) {
  const TensorT<T>& xv = tape.value(x);
  auto strides = broadcast_strides(xv.shape, target);
  TensorT<T> y(target);
  for_each_broadcast<T>(target, strides,
                        [&](int64_t flat, int64_t src) { y[flat] = xv[src]; });
  Shape tgt = target;
  return tape.emit(std::move(y),
                   [x, tgt](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     const TensorT<T>& xv2 = t.value(x);
                     auto strides = broadcast_strides(xv2.shape, tgt);
                     TensorT<T> dx = TensorT<T>::zeros(xv2.shape);
                     for_each_broadcast<T>(tgt, strides,
                                           [&](int64_t flat, int64_t src) { dx[src] += dy[flat]; });
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val reshape(TapeT<T>& tape, Val x, Shape target) {
  const TensorT<T>& xv = tape.value(x);
  SPD_REQUIRE(shape_numel(target) == xv.numel(), "reshape: ", shape_str(xv.shape), " to ",
              shape_str(target), " changes element count");
  TensorT<T> y(target, xv.data);
  Shape src_shape = xv.shape;
  return tape.emit(std::move(y),
                   [x, src_shape](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     t.accumulate(x, TensorT<T>(src_shape, dy.data));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val reduce_mean_all(TapeT<T>& tape, Val x) {
  const TensorT<T>& xv = tape.value(x);
  SPD_REQUIRE(xv.numel() > 0, "reduce_mean: empty tensor");
  double acc = 0;
  for (int64_t i = 0; i < xv.numel(); ++i) acc += static_cast<double>(xv[i]);
  int64_t n = xv.numel();
  TensorT<T> y({1});
  y[0] = static_cast<T>(acc / static_cast<double>(n));
  return tape.emit(std::move(y),
                   [x, n](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     T g = dy[0] / static_cast<T>(n);
                     t.accumulate(x, TensorT<T>::full(t.value(x).shape, g));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val reduce_mean_time(TapeT<T>& tape, Val x) {
  TensorT<T> y = reduce_mean_time_forward(tape.value(x));
  int64_t s = tape.value(x).shape.back();
  return tape.emit(std::move(y),
                   [x, s](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     TensorT<T> dx(t.value(x).shape);
                     T inv = T(1) / static_cast<T>(s);
                     for (int64_t i = 0; i < dy.numel(); ++i) {
                       T g = dy[i] * inv;
                       for (int64_t k = 0; k < s; ++k) dx[i * s + k] = g;
                     }
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val replicate_time(TapeT<T>& tape, Val x, int64_t steps) {
  TensorT<T> y = replicate_time_forward(tape.value(x), steps);
  return tape.emit(std::move(y),
                   [x, steps](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     TensorT<T> dx(t.value(x).shape);
                     for (int64_t i = 0; i < dx.numel(); ++i) {
                       T acc = 0;
                       for (int64_t k = 0; k < steps; ++k) acc += dy[i * steps + k];
                       dx[i] = acc;
                     }
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val relu(TapeT<T>& tape, Val x) {
  const TensorT<T>& xv = tape.value(x);
  TensorT<T> y(xv.shape);
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
  return tape.emit(std::move(y),
                   [x](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(x)) return;
                     const TensorT<T>& xv2 = t.value(x);
                     TensorT<T> dx(xv2.shape);
                     for (int64_t i = 0; i < dx.numel(); ++i)
                       dx[i] = xv2[i] > T(0) ? dy[i] : T(0);
                     t.accumulate(x, std::move(dx));
                   },
                   tape.requires_grad(x));
}

template <typename T>
Val spike_threshold(TapeT<T>& tape, Val u, double v_th, double width) {
  SPD_REQUIRE(width > 0, "spike_threshold: surrogate width must be > 0, got ", width);
  const TensorT<T>& uv = tape.value(u);
  TensorT<T> o(uv.shape);
  T th = static_cast<T>(v_th);
  for (int64_t i = 0; i < o.numel(); ++i) o[i] = uv[i] >= th ? T(1) : T(0);
  T wd = static_cast<T>(width);
  return tape.emit(std::move(o),
                   [u, th, wd](TapeT<T>& t, const TensorT<T>& dy) {
                     if (!t.requires_grad(u)) return;
                     const TensorT<T>& uv2 = t.value(u);
                     TensorT<T> du(uv2.shape);
                     for (int64_t i = 0; i < du.numel(); ++i) {
                       T g = T(1) - std::abs(uv2[i] - th) / wd;
                       du[i] = g > T(0) ? dy[i] * g : T(0);
                     }
                     t.accumulate(u, std::move(du));
                   },
                   tape.requires_grad(u));
}

// ---- explicit instantiations -------------------------------------------------

#define SPD_INSTANTIATE(T)                                                                     \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                        const TensorT<T>*, Conv2dSpec);                        \
  template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, Conv2dSpec,          \
                                   const TensorT<T>&, TensorT<T>*, TensorT<T>*, TensorT<T>*);  \
  template TensorT<T> linear_forward<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                        const TensorT<T>*);                                   \
  template TensorT<T> avgpool2x2_forward<T>(const TensorT<T>&);                               \
  template TensorT<T> upsample_nearest2x_forward<T>(const TensorT<T>&);                       \
  template TensorT<T> replicate_time_forward<T>(const TensorT<T>&, int64_t);                  \
  template TensorT<T> reduce_mean_time_forward<T>(const TensorT<T>&);                         \
  template Val conv2d<T>(TapeT<T>&, Val, Val, Val, Conv2dSpec);                               \
  template Val linear<T>(TapeT<T>&, Val, Val, Val);                                           \
  template Val avgpool2x2<T>(TapeT<T>&, Val);                                                 \
  template Val upsample_nearest2x<T>(TapeT<T>&, Val);                                         \
  template Val add<T>(TapeT<T>&, Val, Val);                                                   \
  template Val mul<T>(TapeT<T>&, Val, Val);                                                   \
  template Val scale<T>(TapeT<T>&, Val, double);                                              \
  template Val concat_channels<T>(TapeT<T>&, const std::vector<Val>&);                        \
  template Val broadcast_to<T>(TapeT<T>&, Val, Shape);                                        \
  template Val reshape<T>(TapeT<T>&, Val, Shape);                                             \
  template Val reduce_mean_all<T>(TapeT<T>&, Val);                                            \
  template Val reduce_mean_time<T>(TapeT<T>&, Val);                                           \
  template Val replicate_time<T>(TapeT<T>&, Val, int64_t);                                    \
  template Val relu<T>(TapeT<T>&, Val);                                                       \
  template Val spike_threshold<T>(TapeT<T>&, Val, double, double);

SPD_INSTANTIATE(float)
SPD_INSTANTIATE(double)

#undef SPD_INSTANTIATE

}  // namespace ops
}  // namespace spikediff
