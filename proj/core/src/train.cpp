#include "spikediff/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace spikediff {

namespace {

Tensor q_sample_batch(const Tensor& x0, const std::vector<int>& ts, const Tensor& eps,
                      const NoiseSchedule& sched) {
  Tensor out(x0.shape);
  int64_t per = x0.numel() / x0.dim(0);
  for (int64_t b = 0; b < x0.dim(0); ++b) {
    double ab = sched.alpha_bar[static_cast<size_t>(ts[static_cast<size_t>(b)])];
    float ca = static_cast<float>(std::sqrt(ab));
    float cb = static_cast<float>(std::sqrt(1.0 - ab));
    for (int64_t i = b * per; i < (b + 1) * per; ++i) out[i] = ca * x0[i] + cb * eps[i];
  }
  return out;
}

Tensor velocity_batch(const Tensor& x0, const std::vector<int>& ts, const Tensor& eps,
                      const NoiseSchedule& sched) {
  Tensor out(x0.shape);
  int64_t per = x0.numel() / x0.dim(0);
  for (int64_t b = 0; b < x0.dim(0); ++b) {
    double ab = sched.alpha_bar[static_cast<size_t>(ts[static_cast<size_t>(b)])];
    float ca = static_cast<float>(std::sqrt(ab));
    float cb = static_cast<float>(std::sqrt(1.0 - ab));
    for (int64_t i = b * per; i < (b + 1) * per; ++i) out[i] = ca * eps[i] - cb * x0[i];
  }
  return out;
}

// mean over batch of per-element-weighted squared-difference sums:
// (1/B) sum_b w_b |a_b - c_b|^2, built from taped primitives
Val weighted_sq_diff(Tape& tape, Val a, Val c, const std::vector<double>& w) {
  const Tensor& av = tape.value(a);
  int64_t batch = av.dim(0);
  int64_t per = av.numel() / batch;
  Tensor wt(av.shape);
  for (int64_t b = 0; b < batch; ++b)
    for (int64_t i = 0; i < per; ++i)
      wt[b * per + i] = static_cast<float>(w[static_cast<size_t>(b)]);
  Val diff = ops::add(tape, a, ops::scale(tape, c, -1.0));
  Val sq = ops::mul(tape, diff, diff);
  Val wsq = ops::mul(tape, sq, tape.leaf(std::move(wt)));
  // mean over everything times per-sample element count = (1/B) sum_b w_b |.|^2
  return ops::scale(tape, ops::reduce_mean_all(tape, wsq), static_cast<double>(per));
}

// unweighted (1/B) sum_b |a_b - c_b|^2 evaluated outside the tape
double mean_sq_diff_value(const Tensor& a, const Tensor& c) {
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(c[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.dim(0));
}

}  // namespace

StepResult training_step(ModelParams& params, const UNetConfig& cfg, const Tensor& x0_batch,
                         Rng& rng, const NoiseSchedule& sched, const TrainConfig& tcfg) {
  tcfg.validate();
  SPD_REQUIRE(x0_batch.rank() == 4, "training_step: x0 must be rank-4 (B,H,W,C), got ",
              shape_str(x0_batch.shape));
  const int64_t batch = x0_batch.dim(0);
  const int steps = cfg.neuron.num_steps;

  // Alg.: t ~ U{1..T} and eps ~ N(0,I), independently per batch element
  std::vector<int> ts(static_cast<size_t>(batch));
  for (auto& t : ts) t = static_cast<int>(rng.uniform_int(1, sched.T));
  Tensor eps(x0_batch.shape);
  rng.fill_normal(eps);

  Tensor x_t = q_sample_batch(x0_batch, ts, eps, sched);
  Tensor v_t = velocity_batch(x0_batch, ts, eps, sched);

  std::vector<double> gammas(static_cast<size_t>(batch)), lambdas(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    gammas[static_cast<size_t>(b)] = sched.gamma[static_cast<size_t>(ts[static_cast<size_t>(b)])];
    lambdas[static_cast<size_t>(b)] =
        sched.lambda[static_cast<size_t>(ts[static_cast<size_t>(b)])];
  }

  Tape tape;
  Val x_signal = encode_direct(tape, tape.leaf(std::move(x_t)), steps);
  ForwardOptions opts;
  opts.train = true;
  UnetRun run = unet_forward(tape, params, cfg, x_signal, ts, opts);

  Val dec = decode_average(tape, run.output);
  Val v_leaf = tape.leaf(v_t);
  Val loss = weighted_sq_diff(tape, dec, v_leaf, gammas);

  StepResult res;
  res.ts = ts;
  res.loss.l_ddpm = mean_sq_diff_value(tape.value(dec), tape.value(v_leaf));
  res.loss.weighted_ddpm = tape.value(loss)[0];

  if (tcfg.use_scl) {
    Val rec = encode_direct(tape, dec, steps);  // enc(dec(y)), the projection of y
    Val scl = weighted_sq_diff(tape, run.output, rec, lambdas);
    res.loss.l_scl = mean_sq_diff_value(tape.value(run.output), tape.value(rec));
    res.loss.weighted_scl = tape.value(scl)[0];
    loss = ops::add(tape, loss, scl);
  }
  if (tcfg.use_signal_loss) {
    Val enc_target = encode_direct(tape, v_leaf, steps);
    Val sig = weighted_sq_diff(tape, run.output, enc_target, lambdas);
    res.loss.l_signal = mean_sq_diff_value(tape.value(run.output), tape.value(enc_target));
    res.loss.weighted_signal = tape.value(sig)[0];
    loss = ops::add(tape, loss, sig);
  }

  res.loss.total = tape.value(loss)[0];
  if (!std::isfinite(res.loss.total)) {
    raise(str("training_step: non-finite loss (t[0]=", ts[0], " l_ddpm=", res.loss.l_ddpm,
              " l_scl=", res.loss.l_scl, " l_signal=", res.loss.l_signal, ")"));
  }

  tape.backward(loss);
  for (const auto& [name, val] : run.bound) res.grads[name] = tape.grad(val);
  return res;
}

Val signal_loss(Tape& tape, Val y_signal, Val z_image, int t, const NoiseSchedule& sched) {
  sched.check_t(t);
  const int64_t steps = tape.value(y_signal).shape.back();
  const int64_t batch = tape.value(y_signal).dim(0);
  Val enc_z = encode_direct(tape, z_image, steps);
  std::vector<double> w(static_cast<size_t>(batch), sched.lambda[static_cast<size_t>(t)]);
  return weighted_sq_diff(tape, y_signal, enc_z, w);
}

void adam_update(ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
                 const TrainConfig& tcfg) {
  tcfg.validate();
  state.step += 1;
  const double b1 = tcfg.beta1, b2 = tcfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  double clip_scale = 1.0;
  if (tcfg.grad_clip > 0) {
    double norm_sq = 0;
    for (const auto& [name, g] : grads)
      for (int64_t i = 0; i < g.numel(); ++i)
        norm_sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
    double norm = std::sqrt(norm_sq);
    if (norm > tcfg.grad_clip) clip_scale = tcfg.grad_clip / norm;
  }

  for (const auto& [name, g] : grads) {
    auto pit = params.tensors.find(name);
    SPD_REQUIRE(pit != params.tensors.end(), "adam: gradient for unknown parameter ", name);
    Tensor& p = pit->second;
    SPD_REQUIRE(p.same_shape(g), "adam: gradient shape mismatch for ", name);
    Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      double gi = static_cast<double>(g[i]) * clip_scale;
      double mi = b1 * m[i] + (1.0 - b1) * gi;
      double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double update = tcfg.lr * (mi / bc1) / (std::sqrt(vi / bc2) + tcfg.adam_eps);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
}

TrainResult train_loop(ModelParams& params, const UNetConfig& cfg, const Tensor& dataset,
                       const NoiseSchedule& sched, const TrainConfig& tcfg, AdamState* state,
                       const CheckpointSink& sink) {
  tcfg.validate();
  SPD_REQUIRE(dataset.rank() == 4 && dataset.dim(0) > 0, "train_loop: dataset must be a non-empty ",
              "(N,H,W,C) tensor, got ", shape_str(dataset.shape));
  const int64_t n = dataset.dim(0);
  const int64_t per = dataset.numel() / n;

  Rng rng(tcfg.seed);
  AdamState local_state;
  AdamState& st = state ? *state : local_state;

  TrainResult result;
  int64_t step = st.step;
  int64_t max_steps =
      tcfg.max_steps > 0 ? st.step + tcfg.max_steps
                         : st.step + static_cast<int64_t>(tcfg.epochs) * ((n + tcfg.batch - 1) / tcfg.batch);

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  bool done = false;
  for (int epoch = 0; !done; ++epoch) {
    if (tcfg.max_steps == 0 && epoch >= tcfg.epochs) break;
    // Fisher-Yates with the run rng keeps the whole trajectory seed-determined
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    for (int64_t off = 0; off + tcfg.batch <= n || off == 0; off += tcfg.batch) {
      int64_t bsz = std::min<int64_t>(tcfg.batch, n - off);
      if (bsz <= 0) break;
      Tensor batch({bsz, dataset.dim(1), dataset.dim(2), dataset.dim(3)});
      for (int64_t b = 0; b < bsz; ++b)
        std::copy_n(dataset.ptr() + order[static_cast<size_t>(off + b)] * per, per,
                    batch.ptr() + b * per);

      StepResult sr;
      try {
        sr = training_step(params, cfg, batch, rng, sched, tcfg);
      } catch (const std::exception& e) {
        raise(str("train_loop: step ", step + 1, " failed: ", e.what()));
      }
      adam_update(params, sr.grads, st, tcfg);
      step = st.step;
      result.history.push_back(sr.loss);

      if (tcfg.log_every > 0 && step % tcfg.log_every == 0) {
        double mean_t = 0;
        for (int t : sr.ts) mean_t += t;
        mean_t /= static_cast<double>(sr.ts.size());
        std::printf("step=%lld t=%.1f l_ddpm=%.6f l_scl=%.6f total=%.6f\n",
                    static_cast<long long>(step), mean_t, sr.loss.l_ddpm, sr.loss.l_scl,
                    sr.loss.total);
        std::fflush(stdout);
      }
      done = step >= max_steps;
      if (sink) sink(step, params, st, done);
      if (done) break;
    }
  }
  result.steps = step;
  return result;
}

}  // namespace spikediff
