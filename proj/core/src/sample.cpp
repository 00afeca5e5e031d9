#include "spikediff/sample.hpp"

#include <cmath>

#include "spikediff/rng.hpp"

namespace spikediff {

namespace {

Tensor concat_bundle(const Tensor& a, const Tensor& b) {
  SPD_REQUIRE(a.rank() == 5 && b.rank() == 5 && a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1) &&
                  a.dim(2) == b.dim(2) && a.dim(4) == b.dim(4),
              "fused: bundle shapes incompatible: ", shape_str(a.shape), " vs ",
              shape_str(b.shape));
  int64_t ca = a.dim(3), cb = b.dim(3), s = a.dim(4);
  Tensor out({a.dim(0), a.dim(1), a.dim(2), ca + cb, s});
  int64_t sites = a.dim(0) * a.dim(1) * a.dim(2);
  for (int64_t p = 0; p < sites; ++p) {
    std::copy_n(a.ptr() + p * ca * s, ca * s, out.ptr() + p * (ca + cb) * s);
    std::copy_n(b.ptr() + p * cb * s, cb * s, out.ptr() + (p * (ca + cb) + ca) * s);
  }
  return out;
}

void add_bias_field(Tensor& x, const Tensor& field) {
  // x (B,H,W,C,S) += field (H,W,C), broadcast over batch and time
  int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3), s = x.dim(4);
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t p = 0; p < h * w; ++p)
      for (int64_t ci = 0; ci < c; ++ci) {
        float v = field[p * c + ci];
        float* dst = x.ptr() + ((bi * h * w + p) * c + ci) * s;
        for (int64_t si = 0; si < s; ++si) dst[si] += v;
      }
}

struct FusionPieces {
  const Tensor* stem_w;
  const Tensor* stem_b;
  const Tensor* final_w;
  const Tensor* final_b;
  int64_t img_channels;
  int64_t hidden_channels;
};

FusionPieces fusion_pieces(const ModelParams& params, const UNetConfig& cfg) {
  auto find = [&](const char* name) -> const Tensor* {
    auto it = params.tensors.find(name);
    SPD_REQUIRE(it != params.tensors.end(),
                "fusion: non-affine boundary layer (missing conv parameter ", name, ")");
    return &it->second;
  };
  FusionPieces p{find("stem.w"), find("stem.b"), find("final.w"), find("final.b"),
                 cfg.in_channels, 0};
  SPD_REQUIRE(p.final_w->rank() == 4 && p.final_w->dim(1) == 1 && p.final_w->dim(2) == 1,
              "fusion: requires a 1x1 final conv (zero padding does not commute with wider "
              "kernels), got ",
              shape_str(p.final_w->shape));
  SPD_REQUIRE(p.final_w->dim(0) == p.img_channels, "fusion: final conv emits ",
              p.final_w->dim(0), " channels, image has ", p.img_channels);
  SPD_REQUIRE(p.stem_w->rank() == 4 && p.stem_w->dim(3) == p.img_channels,
              "fusion: stem conv consumes ", p.stem_w->dim(3), " channels, image has ",
              p.img_channels);
  p.hidden_channels = p.final_w->dim(3);
  return p;
}

// carry map: x'_t = seed_scale * seed + sum_j group_scale[j] * (W_last (*) o_j) + bias
struct CarryState {
  double seed_scale = 1.0;
  std::vector<double> group_scales;
  std::vector<double> bias;  // per image channel

  explicit CarryState(int64_t img_channels) : bias(static_cast<size_t>(img_channels), 0.0) {}

  void advance(double a, double b, const Tensor& final_bias) {
    seed_scale *= a;
    for (double& g : group_scales) g *= a;
    group_scales.push_back(b);
    for (size_t c = 0; c < bias.size(); ++c)
      bias[c] = a * bias[c] + b * static_cast<double>(final_bias[static_cast<int64_t>(c)]);
  }
};

FusedStepConv make_step_conv(const FusionPieces& pc, const CarryState& st, int t, int image_size) {
  const Tensor& wf = *pc.stem_w;       // (C0, kh, kw, C_img)
  const Tensor& wl = *pc.final_w;      // (C_img, 1, 1, C_h)
  const int64_t co = wf.dim(0), kh = wf.dim(1), kw = wf.dim(2);
  const int64_t cimg = pc.img_channels, chid = pc.hidden_channels;
  const int64_t groups = static_cast<int64_t>(st.group_scales.size());
  const int64_t cin = cimg + groups * chid;

  FusedStepConv fc;
  fc.t = t;
  fc.kernel = Tensor::zeros({co, kh, kw, cin});
  for (int64_t o = 0; o < co; ++o)
    for (int64_t r = 0; r < kh; ++r)
      for (int64_t c = 0; c < kw; ++c) {
        const float* wrow = wf.ptr() + ((o * kh + r) * kw + c) * cimg;
        float* krow = fc.kernel.ptr() + ((o * kh + r) * kw + c) * cin;
        for (int64_t ci = 0; ci < cimg; ++ci)
          krow[ci] = static_cast<float>(st.seed_scale) * wrow[ci];
        for (int64_t g = 0; g < groups; ++g) {
          const float gs = static_cast<float>(st.group_scales[static_cast<size_t>(g)]);
          for (int64_t hc = 0; hc < chid; ++hc) {
            float acc = 0;
            for (int64_t ci = 0; ci < cimg; ++ci)
              acc += wrow[ci] * wl[(ci * chid) + hc];  // W_last[ci,0,0,hc]
            krow[cimg + g * chid + hc] = gs * acc;
          }
        }
      }

  // bias field: the stem conv applied to the constant carry-bias canvas; the
  // zero padding makes this position-dependent near the border
  Tensor canvas({1, image_size, image_size, cimg, 1});
  for (int64_t p = 0; p < image_size * image_size; ++p)
    for (int64_t ci = 0; ci < cimg; ++ci)
      canvas[p * cimg + ci] = static_cast<float>(st.bias[static_cast<size_t>(ci)]);
  ops::Conv2dSpec spec{1, static_cast<int>((kh - 1) / 2)};
  Tensor field5 = ops::conv2d_forward(canvas, wf, pc.stem_b, spec);
  fc.bias_field = Tensor({image_size, image_size, co}, std::move(field5.data));
  return fc;
}

}  // namespace

Tensor compose_conv_kernels(const Tensor& outer, const Tensor& inner) {
  SPD_REQUIRE(outer.rank() == 4 && inner.rank() == 4, "compose: kernels must be rank-4");
  SPD_REQUIRE(outer.dim(3) == inner.dim(0), "compose: outer consumes ", outer.dim(3),
              " channels, inner emits ", inner.dim(0));
  int64_t co = outer.dim(0), k2h = outer.dim(1), k2w = outer.dim(2), cm = outer.dim(3);
  int64_t k1h = inner.dim(1), k1w = inner.dim(2), ci = inner.dim(3);
  Tensor out = Tensor::zeros({co, k1h + k2h - 1, k1w + k2w - 1, ci});
  for (int64_t o = 0; o < co; ++o)
    for (int64_t r2 = 0; r2 < k2h; ++r2)
      for (int64_t c2 = 0; c2 < k2w; ++c2)
        for (int64_t m = 0; m < cm; ++m) {
          float wo = outer.at({o, r2, c2, m});
          if (wo == 0.0f) continue;
          for (int64_t r1 = 0; r1 < k1h; ++r1)
            for (int64_t c1 = 0; c1 < k1w; ++c1)
              for (int64_t i = 0; i < ci; ++i)
                out.at({o, r2 + r1, c2 + c1, i}) += wo * inner.at({m, r1, c1, i});
        }
  return out;
}

Tensor UnetSignalModel::eval(const Tensor& x_signal, int t) {
  Tape tape(false);
  Val x = tape.leaf(x_signal);
  UnetRun run = unet_forward(tape, params_, cfg_, x, {t});
  return tape.value(run.output);
}

Tensor sample_reference(SignalModel& model, const NoiseSchedule& sched, const SamplerConfig& cfg,
                        const Shape& image_hwc) {
  cfg.validate(sched);
  SPD_REQUIRE(image_hwc.size() == 3, "sampler: image shape must be (H,W,C)");
  std::vector<int> steps = inference_steps(sched.T, cfg.num_inference_steps);
  Rng rng(cfg.seed);
  Tensor x = rng.normal_tensor({cfg.batch, image_hwc[0], image_hwc[1], image_hwc[2]});
  const int s = model.time_steps();
  for (int p = static_cast<int>(steps.size()) - 1; p >= 0; --p) {
    int t = steps[static_cast<size_t>(p)];
    int lo = p > 0 ? steps[static_cast<size_t>(p) - 1] : 0;
    Tensor y = decode_average(model.eval(encode_direct(x, s), t));
    x = ddim_step_between(x, y, t, lo, sched);
  }
  return x;
}

Tensor sample_signal_space(SignalModel& model, const NoiseSchedule& sched,
                           const SamplerConfig& cfg, const Shape& image_hwc) {
  cfg.validate(sched);
  SPD_REQUIRE(image_hwc.size() == 3, "sampler: image shape must be (H,W,C)");
  std::vector<int> steps = inference_steps(sched.T, cfg.num_inference_steps);
  Rng rng(cfg.seed);
  Tensor x = rng.normal_tensor({cfg.batch, image_hwc[0], image_hwc[1], image_hwc[2]});
  Tensor xs = encode_direct(x, model.time_steps());
  for (int p = static_cast<int>(steps.size()) - 1; p >= 0; --p) {
    int t = steps[static_cast<size_t>(p)];
    int lo = p > 0 ? steps[static_cast<size_t>(p) - 1] : 0;
    Tensor ys = model.eval(xs, t);
    xs = ddim_step_between(xs, ys, t, lo, sched);
  }
  return decode_average(xs);
}

FusedPlan build_fused_plan(const ModelParams& params, const UNetConfig& cfg,
                           const NoiseSchedule& sched, const std::vector<int>& steps) {
  SPD_REQUIRE(!steps.empty(), "fusion: empty step sequence");
  for (size_t i = 0; i + 1 < steps.size(); ++i)
    SPD_REQUIRE(steps[i] < steps[i + 1], "fusion: steps must be strictly increasing");
  FusionPieces pc = fusion_pieces(params, cfg);

  FusedPlan plan;
  plan.steps = steps;
  CarryState st(pc.img_channels);
  const int k = static_cast<int>(steps.size());
  for (int p = 0; p < k; ++p) {
    int t = steps[static_cast<size_t>(k - 1 - p)];
    int lo = p < k - 1 ? steps[static_cast<size_t>(k - 2 - p)] : 0;
    plan.convs.push_back(make_step_conv(pc, st, t, cfg.image_size));
    auto [a, b] = ddim_pair_coefficients(sched.alpha_bar[static_cast<size_t>(lo)],
                                         sched.alpha_bar[static_cast<size_t>(t)]);
    st.advance(a, b, *pc.final_b);
  }

  // x'_0 reconstruction from the complete bundle
  const int64_t cin = pc.img_channels + k * pc.hidden_channels;
  plan.final_kernel = Tensor::zeros({pc.img_channels, 1, 1, cin});
  for (int64_t ci = 0; ci < pc.img_channels; ++ci) {
    plan.final_kernel.at({ci, 0, 0, ci}) = static_cast<float>(st.seed_scale);
    for (int g = 0; g < k; ++g) {
      float gs = static_cast<float>(st.group_scales[static_cast<size_t>(g)]);
      for (int64_t hc = 0; hc < pc.hidden_channels; ++hc)
        plan.final_kernel.at({ci, 0, 0, pc.img_channels + g * pc.hidden_channels + hc}) =
            gs * (*pc.final_w)[ci * pc.hidden_channels + hc];
    }
  }
  plan.final_bias = Tensor({pc.img_channels});
  for (int64_t ci = 0; ci < pc.img_channels; ++ci)
    plan.final_bias[ci] = static_cast<float>(st.bias[static_cast<size_t>(ci)]);
  return plan;
}

FusedStepConv fuse_step_conv(const ModelParams& params, const UNetConfig& cfg,
                             const NoiseSchedule& sched, const std::vector<int>& steps,
                             int position) {
  SPD_REQUIRE(position >= 0 && position < static_cast<int>(steps.size()),
              "fuse_step_conv: position ", position, " out of range for ", steps.size(),
              " steps");
  FusedPlan plan = build_fused_plan(params, cfg, sched, steps);
  return plan.convs[static_cast<size_t>(position)];
}

Tensor sample_fused(ModelParams& params, const UNetConfig& cfg, const NoiseSchedule& sched,
                    const SamplerConfig& cfg_s, const FusedPlan* cached_plan) {
  cfg_s.validate(sched);
  std::vector<int> steps = inference_steps(sched.T, cfg_s.num_inference_steps);
  FusedPlan local;
  const FusedPlan* plan = cached_plan;
  if (!plan) {
    local = build_fused_plan(params, cfg, sched, steps);
    plan = &local;
  }
  SPD_REQUIRE(plan->steps == steps, "fused: cached plan was built for a different step sequence");

  Rng rng(cfg_s.seed);
  Tensor x_t = rng.normal_tensor({cfg_s.batch, cfg.image_size, cfg.image_size, cfg.in_channels});
  Tensor bundle = encode_direct(x_t, cfg.neuron.num_steps);  // real-valued seed group

  const int k = static_cast<int>(steps.size());
  for (int p = 0; p < k; ++p) {
    const FusedStepConv& fc = plan->convs[static_cast<size_t>(p)];
    SPD_REQUIRE(bundle.dim(3) == fc.kernel.dim(3), "fused: bundle has ", bundle.dim(3),
                " channels, step conv expects ", fc.kernel.dim(3));
    ops::Conv2dSpec spec{1, static_cast<int>((fc.kernel.dim(1) - 1) / 2)};
    Tensor stem = ops::conv2d_forward<float>(bundle, fc.kernel, nullptr, spec);
    add_bias_field(stem, fc.bias_field);

    Tape tape(false);
    Val stem_val = tape.leaf(std::move(stem));
    Val hidden = unet_body_from_stem(tape, params, cfg, stem_val, {fc.t});
    const Tensor& spikes = tape.value(hidden);
    for (float v : spikes.data)
      SPD_REQUIRE(v == 0.0f || v == 1.0f,
                  "fused: non-binary inter-step value ", v, " at step t=", fc.t);
    bundle = concat_bundle(bundle, spikes);
  }

  Tensor x0_sig = ops::conv2d_forward(bundle, plan->final_kernel, &plan->final_bias,
                                      ops::Conv2dSpec{1, 0});
  return decode_average(x0_sig);
}

}  // namespace spikediff
