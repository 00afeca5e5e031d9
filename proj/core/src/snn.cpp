#include "spikediff/snn.hpp"

#include <memory>

namespace spikediff {

template <typename T>
std::pair<LifStateT<T>, TensorT<T>> lif_step(const LifStateT<T>& state,
                                             const TensorT<T>& input_current,
                                             const NeuronConfig& cfg) {
  cfg.validate();
  SPD_REQUIRE(state.membrane.same_shape(input_current), "lif_step: state shape ",
              shape_str(state.membrane.shape), " does not match current shape ",
              shape_str(input_current.shape));
  SPD_REQUIRE(state.last_spike.same_shape(input_current), "lif_step: spike state shape mismatch");
  const T tau = static_cast<T>(cfg.tau_decay);
  const T th = static_cast<T>(cfg.v_threshold);
  LifStateT<T> next{TensorT<T>(input_current.shape), TensorT<T>(input_current.shape)};
  TensorT<T> spikes(input_current.shape);
  for (int64_t i = 0; i < input_current.numel(); ++i) {
    T u = tau * state.membrane[i] * (T(1) - state.last_spike[i]) + input_current[i];
    T o = u >= th ? T(1) : T(0);
    next.membrane[i] = u;
    next.last_spike[i] = o;
    spikes[i] = o;
  }
  return {std::move(next), std::move(spikes)};
}

template <typename T>
TensorT<T> surrogate_grad(const TensorT<T>& u, const NeuronConfig& cfg) {
  const T th = static_cast<T>(cfg.v_threshold);
  const T a = static_cast<T>(cfg.surrogate_width);
  TensorT<T> g(u.shape);
  for (int64_t i = 0; i < u.numel(); ++i) {
    T v = T(1) - std::abs(u[i] - th) / a;
    g[i] = v > T(0) ? v : T(0);
  }
  return g;
}

template <typename T>
Val lif(TapeT<T>& tape, Val currents, const NeuronConfig& cfg) {
  cfg.validate();
  const TensorT<T>& in = tape.value(currents);
  SPD_REQUIRE(in.rank() >= 2, "lif: need a trailing time axis, got ", shape_str(in.shape));
  const int64_t steps = in.shape.back();
  const int64_t sites = in.numel() / steps;
  const T tau = static_cast<T>(cfg.tau_decay);
  const T th = static_cast<T>(cfg.v_threshold);

  // membrane trace is saved for the surrogate in backward
  auto membrane = std::make_shared<TensorT<T>>(in.shape);
  TensorT<T> spikes(in.shape);
  for (int64_t p = 0; p < sites; ++p) {
    T u_prev = 0, o_prev = 0;
    const T* ip = in.ptr() + p * steps;
    T* up = membrane->ptr() + p * steps;
    T* op = spikes.ptr() + p * steps;
    for (int64_t s = 0; s < steps; ++s) {
      T u = tau * u_prev * (T(1) - o_prev) + ip[s];
      T o = u >= th ? T(1) : T(0);
      up[s] = u;
      op[s] = o;
      u_prev = u;
      o_prev = o;
    }
  }

  auto out_spikes = std::make_shared<TensorT<T>>(spikes);
  const T a = static_cast<T>(cfg.surrogate_width);
  return tape.emit(
      std::move(spikes),
      [currents, membrane, out_spikes, steps, sites, tau, th, a](TapeT<T>& t,
                                                                 const TensorT<T>& dy) {
        if (!t.requires_grad(currents)) return;
        // du_s = dy_s * surr'(u_s) + tau * (1 - o_s) * du_{s+1}; dI_s = du_s.
        // The (1 - o) reset factor is a detached constant.
        TensorT<T> dx(dy.shape);
        for (int64_t p = 0; p < sites; ++p) {
          const T* up = membrane->ptr() + p * steps;
          const T* op = out_spikes->ptr() + p * steps;
          const T* gy = dy.ptr() + p * steps;
          T* gx = dx.ptr() + p * steps;
          T carry = 0;  // tau*(1-o_s)*du_{s+1}
          for (int64_t s = steps - 1; s >= 0; --s) {
            T surr = T(1) - std::abs(up[s] - th) / a;
            if (surr < T(0)) surr = T(0);
            T du = gy[s] * surr + carry;
            gx[s] = du;
            carry = s > 0 ? tau * (T(1) - op[s - 1]) * du : T(0);
          }
        }
        t.accumulate(currents, std::move(dx));
      },
      tape.requires_grad(currents));
}

namespace {

struct TdBnLayout {
  int64_t channels;
  int64_t inner;   // elements to the right of the channel axis (time, maybe spatial)
  int64_t outer;   // elements to the left (batch, maybe spatial)
};

inline TdBnLayout tdbn_layout(const Shape& s) {
  SPD_REQUIRE(s.size() == 5 || s.size() == 3,
              "tdbn: input must be rank-5 (B,H,W,C,S) or rank-3 (B,F,S), got ", shape_str(s));
  if (s.size() == 5) return {s[3], s[4], s[0] * s[1] * s[2]};
  return {s[1], s[2], s[0]};
}

}  // namespace

template <typename T>
Val tdbn(TapeT<T>& tape, Val x, Val gamma, Val beta, Tensor& running_mean, Tensor& running_var,
         const NeuronConfig& cfg, bool train, double momentum, double eps) {
  const TensorT<T>& xv = tape.value(x);
  TdBnLayout lay = tdbn_layout(xv.shape);
  SPD_REQUIRE(xv.dim(0) > 0, "tdbn: zero-size batch rejected");
  const TensorT<T>& g = tape.value(gamma);
  const TensorT<T>& b = tape.value(beta);
  SPD_REQUIRE(g.numel() == lay.channels && b.numel() == lay.channels, "tdbn: scale/shift size ",
              g.numel(), "/", b.numel(), " does not match ", lay.channels, " channels");
  SPD_REQUIRE(running_mean.numel() == lay.channels && running_var.numel() == lay.channels,
              "tdbn: running stats size mismatch");

  const int64_t n_per_ch = lay.outer * lay.inner;
  const T th = static_cast<T>(cfg.v_threshold);

  // per-channel moments (double accumulation, fixed order)
  std::vector<double> mean(static_cast<size_t>(lay.channels), 0.0);
  std::vector<double> var(static_cast<size_t>(lay.channels), 0.0);
  if (train) {
    for (int64_t o = 0; o < lay.outer; ++o)
      for (int64_t c = 0; c < lay.channels; ++c) {
        const T* p = xv.ptr() + (o * lay.channels + c) * lay.inner;
        double acc = 0;
        for (int64_t i = 0; i < lay.inner; ++i) acc += static_cast<double>(p[i]);
        mean[static_cast<size_t>(c)] += acc;
      }
    for (auto& m : mean) m /= static_cast<double>(n_per_ch);
    for (int64_t o = 0; o < lay.outer; ++o)
      for (int64_t c = 0; c < lay.channels; ++c) {
        const T* p = xv.ptr() + (o * lay.channels + c) * lay.inner;
        double acc = 0;
        for (int64_t i = 0; i < lay.inner; ++i) {
          double d = static_cast<double>(p[i]) - mean[static_cast<size_t>(c)];
          acc += d * d;
        }
        var[static_cast<size_t>(c)] += acc;
      }
    for (auto& v : var) v /= static_cast<double>(n_per_ch);
    for (int64_t c = 0; c < lay.channels; ++c) {
      running_mean[c] = static_cast<float>((1.0 - momentum) * running_mean[c] +
                                           momentum * mean[static_cast<size_t>(c)]);
      running_var[c] = static_cast<float>((1.0 - momentum) * running_var[c] +
                                          momentum * var[static_cast<size_t>(c)]);
    }
  } else {
    for (int64_t c = 0; c < lay.channels; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      var[static_cast<size_t>(c)] = running_var[c];
    }
  }

  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(lay.channels));
  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(lay.channels));
  for (int64_t c = 0; c < lay.channels; ++c) {
    (*inv_std)[static_cast<size_t>(c)] =
        static_cast<T>(1.0 / std::sqrt(var[static_cast<size_t>(c)] + eps));
    (*mu)[static_cast<size_t>(c)] = static_cast<T>(mean[static_cast<size_t>(c)]);
  }

  TensorT<T> y(xv.shape);
  for (int64_t o = 0; o < lay.outer; ++o)
    for (int64_t c = 0; c < lay.channels; ++c) {
      const T* p = xv.ptr() + (o * lay.channels + c) * lay.inner;
      T* q = y.ptr() + (o * lay.channels + c) * lay.inner;
      const T k = g[c] * th * (*inv_std)[static_cast<size_t>(c)];
      const T m = (*mu)[static_cast<size_t>(c)];
      const T bb = b[c];
      for (int64_t i = 0; i < lay.inner; ++i) q[i] = k * (p[i] - m) + bb;
    }

  bool need = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  return tape.emit(
      std::move(y),
      [x, gamma, beta, lay, n_per_ch, inv_std, mu, th, train](TapeT<T>& t, const TensorT<T>& dy) {
        const TensorT<T>& xv2 = t.value(x);
        const TensorT<T>& g2 = t.value(gamma);
        // per-channel reductions: sum(dy) and sum(dy * xhat)
        std::vector<double> sum_dy(static_cast<size_t>(lay.channels), 0.0);
        std::vector<double> sum_dy_xhat(static_cast<size_t>(lay.channels), 0.0);
        for (int64_t o = 0; o < lay.outer; ++o)
          for (int64_t c = 0; c < lay.channels; ++c) {
            const T* p = xv2.ptr() + (o * lay.channels + c) * lay.inner;
            const T* gy = dy.ptr() + (o * lay.channels + c) * lay.inner;
            const T is = (*inv_std)[static_cast<size_t>(c)];
            const T m = (*mu)[static_cast<size_t>(c)];
            double a0 = 0, a1 = 0;
            for (int64_t i = 0; i < lay.inner; ++i) {
              a0 += static_cast<double>(gy[i]);
              a1 += static_cast<double>(gy[i]) * static_cast<double>((p[i] - m) * is);
            }
            sum_dy[static_cast<size_t>(c)] += a0;
            sum_dy_xhat[static_cast<size_t>(c)] += a1;
          }
        if (t.requires_grad(gamma)) {
          TensorT<T> dg({lay.channels});
          for (int64_t c = 0; c < lay.channels; ++c)
            dg[c] = static_cast<T>(sum_dy_xhat[static_cast<size_t>(c)]) * th;
          t.accumulate(gamma, std::move(dg));
        }
        if (t.requires_grad(beta)) {
          TensorT<T> db({lay.channels});
          for (int64_t c = 0; c < lay.channels; ++c)
            db[c] = static_cast<T>(sum_dy[static_cast<size_t>(c)]);
          t.accumulate(beta, std::move(db));
        }
        if (t.requires_grad(x)) {
          TensorT<T> dx(xv2.shape);
          const double n = static_cast<double>(n_per_ch);
          for (int64_t o = 0; o < lay.outer; ++o)
            for (int64_t c = 0; c < lay.channels; ++c) {
              const T* p = xv2.ptr() + (o * lay.channels + c) * lay.inner;
              const T* gy = dy.ptr() + (o * lay.channels + c) * lay.inner;
              T* q = dx.ptr() + (o * lay.channels + c) * lay.inner;
              const T is = (*inv_std)[static_cast<size_t>(c)];
              const T m = (*mu)[static_cast<size_t>(c)];
              const T k = g2[c] * th * is;
              if (train) {
                const T mean_dy = static_cast<T>(sum_dy[static_cast<size_t>(c)] / n);
                const T mean_dy_xhat = static_cast<T>(sum_dy_xhat[static_cast<size_t>(c)] / n);
                for (int64_t i = 0; i < lay.inner; ++i) {
                  T xhat = (p[i] - m) * is;
                  q[i] = k * (gy[i] - mean_dy - xhat * mean_dy_xhat);
                }
              } else {
                // eval mode: statistics are constants
                for (int64_t i = 0; i < lay.inner; ++i) q[i] = k * gy[i];
              }
            }
          t.accumulate(x, std::move(dx));
        }
      },
      need);
}

template <typename T>
TensorT<T> encode_direct(const TensorT<T>& image, int64_t steps) {
  return ops::replicate_time_forward(image, steps);
}

template <typename T>
Val encode_direct(TapeT<T>& tape, Val image, int64_t steps) {
  return ops::replicate_time(tape, image, steps);
}

template <typename T>
TensorT<T> decode_average(const TensorT<T>& signal) {
  return ops::reduce_mean_time_forward(signal);
}

template <typename T>
Val decode_average(TapeT<T>& tape, Val signal) {
  return ops::reduce_mean_time(tape, signal);
}

template <typename T>
SignalTensorT<T> synaptic_current(const SignalTensorT<T>& spikes, const TensorT<T>& weight,
                                  const TensorT<T>* bias, ops::Conv2dSpec spec) {
  SPD_REQUIRE(spikes.kind == SignalKind::Spike,
              "synaptic_current: input must be spikes (currents feed LIF units, not synapses)");
  return {ops::conv2d_forward(spikes.values, weight, bias, spec), SignalKind::Current};
}

template <typename T>
SignalTensorT<T> synaptic_current(const SignalTensorT<T>& spikes, const TensorT<T>& weight,
                                  const TensorT<T>* bias) {
  SPD_REQUIRE(spikes.kind == SignalKind::Spike,
              "synaptic_current: input must be spikes (currents feed LIF units, not synapses)");
  return {ops::linear_forward(spikes.values, weight, bias), SignalKind::Current};
}

#define SPD_INSTANTIATE(T)                                                                    \
  template std::pair<LifStateT<T>, TensorT<T>> lif_step<T>(const LifStateT<T>&,               \
                                                           const TensorT<T>&,                 \
                                                           const NeuronConfig&);              \
  template TensorT<T> surrogate_grad<T>(const TensorT<T>&, const NeuronConfig&);              \
  template Val lif<T>(TapeT<T>&, Val, const NeuronConfig&);                                   \
  template Val tdbn<T>(TapeT<T>&, Val, Val, Val, Tensor&, Tensor&, const NeuronConfig&,      \
                       bool, double, double);                                                 \
  template TensorT<T> encode_direct<T>(const TensorT<T>&, int64_t);                          \
  template Val encode_direct<T>(TapeT<T>&, Val, int64_t);                                    \
  template TensorT<T> decode_average<T>(const TensorT<T>&);                                  \
  template Val decode_average<T>(TapeT<T>&, Val);                                            \
  template SignalTensorT<T> synaptic_current<T>(const SignalTensorT<T>&, const TensorT<T>&,  \
                                                const TensorT<T>*, ops::Conv2dSpec);         \
  template SignalTensorT<T> synaptic_current<T>(const SignalTensorT<T>&, const TensorT<T>&,  \
                                                const TensorT<T>*);

SPD_INSTANTIATE(float)
SPD_INSTANTIATE(double)

#undef SPD_INSTANTIATE

}  // namespace spikediff
