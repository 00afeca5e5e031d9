#include "spikediff/unet.hpp"

#include <cmath>

namespace spikediff {

Tensor time_embedding(int t, int dim) {
  SPD_REQUIRE(dim >= 2 && dim % 2 == 0, "time_embedding: dim must be even and >= 2, got ", dim);
  const int half = dim / 2;
  Tensor e({dim});
  const double log_max_period = std::log(10000.0);
  for (int i = 0; i < half; ++i) {
    double freq = half > 1 ? std::exp(-log_max_period * i / (half - 1)) : 1.0;
    double arg = static_cast<double>(t) * freq;
    e[i] = static_cast<float>(std::sin(arg));
    e[half + i] = static_cast<float>(std::cos(arg));
  }
  return e;
}

namespace {

constexpr ops::Conv2dSpec kConv3{1, 1};
constexpr ops::Conv2dSpec kConv1{1, 0};

struct Builder {
  ModelParams params;
  Rng rng;

  explicit Builder(uint64_t seed) : rng(seed) {}

  void conv(const std::string& name, int64_t cin, int64_t cout, int64_t k, bool zero = false) {
    Tensor w({cout, k, k, cin});
    if (!zero) {
      double bound = 1.0 / std::sqrt(static_cast<double>(k * k * cin));
      rng.fill_uniform(w, -bound, bound);
    }
    params.tensors[name + ".w"] = std::move(w);
    params.tensors[name + ".b"] = Tensor::zeros({cout});
  }
  void linear(const std::string& name, int64_t fi, int64_t fo) {
    Tensor w({fo, fi});
    double bound = 1.0 / std::sqrt(static_cast<double>(fi));
    rng.fill_uniform(w, -bound, bound);
    params.tensors[name + ".w"] = std::move(w);
    params.tensors[name + ".b"] = Tensor::zeros({fo});
  }
  void bn(const std::string& name, int64_t ch) {
    params.tensors[name + ".gamma"] = Tensor::full({ch}, 1.0f);
    params.tensors[name + ".beta"] = Tensor::zeros({ch});
    params.buffers[name + ".rmean"] = Tensor::zeros({ch});
    params.buffers[name + ".rvar"] = Tensor::full({ch}, 1.0f);
  }
  void res_block(const std::string& name, int64_t cin, int64_t ch, int64_t embed) {
    conv(name + ".conv1", cin, ch, 3);
    bn(name + ".bn1", ch);
    linear(name + ".tproj", embed, ch);
    conv(name + ".conv2", ch, ch, 3);
    bn(name + ".bn2", ch);
    if (cin != ch) conv(name + ".skip", cin, ch, 1);
  }
};

}  // namespace

ModelParams build_unet(const UNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  Builder b(seed);
  const int64_t embed = cfg.embed_dim();
  const int levels = cfg.levels();
  const int nres = cfg.num_res_blocks;

  b.linear("time.l1", embed, embed);
  b.bn("time.bn1", embed);
  b.linear("time.l2", embed, embed);
  b.bn("time.bn2", embed);

  b.conv("stem", cfg.in_channels, cfg.level_channels(0), 3);
  b.bn("stem_bn", cfg.level_channels(0));

  int64_t cur = cfg.level_channels(0);
  for (int l = 0; l < levels; ++l) {
    int64_t ch = cfg.level_channels(l);
    for (int k = 0; k < nres; ++k) {
      b.res_block(str("down", l, ".rb", k), k == 0 ? cur : ch, ch, embed);
    }
    cur = ch;
    if (l < levels - 1) {
      b.conv(str("down", l, ".ds"), ch, ch, 1);
      b.bn(str("down", l, ".ds_bn"), ch);
    } else {
      b.conv(str("down", l, ".tail"), ch, ch, 3);
      b.bn(str("down", l, ".tail_bn"), ch);
    }
  }
  for (int l = levels - 1; l >= 0; --l) {
    int64_t ch = cfg.level_channels(l);
    for (int k = 0; k < nres; ++k) {
      b.res_block(str("up", l, ".rb", k), k == 0 ? cur + ch : ch, ch, embed);
    }
    cur = ch;
    if (l > 0) {
      b.conv(str("up", l, ".us"), ch, ch, 3);
      b.bn(str("up", l, ".us_bn"), ch);
    } else {
      b.conv("up0.tail", ch, ch, 3);
      b.bn("up0.tail_bn", ch);
    }
  }
  b.res_block("final.rb", cfg.level_channels(0), cfg.level_channels(0), embed);
  int64_t concat_ch = static_cast<int64_t>(2 * nres + 1) * cfg.level_channels(0);
  b.conv("final", concat_ch, cfg.in_channels, 1, /*zero=*/true);
  return b.params;
}

namespace {

struct Ctx {
  Tape& tape;
  ModelParams& params;
  const UNetConfig& cfg;
  const ForwardOptions& opts;
  std::map<std::string, Val>& bound;

  Val p(const std::string& name) {
    auto it = bound.find(name);
    if (it != bound.end()) return it->second;
    auto pt = params.tensors.find(name);
    SPD_REQUIRE(pt != params.tensors.end(), "unet: missing parameter ", name);
    Val v = tape.leaf(pt->second, opts.train);
    bound.emplace(name, v);
    return v;
  }
  Tensor& buf(const std::string& name) {
    auto it = params.buffers.find(name);
    SPD_REQUIRE(it != params.buffers.end(), "unet: missing buffer ", name);
    return it->second;
  }
  void trace(const std::string& name, SignalKind kind, Val input) {
    if (!opts.trace) return;
    bool binary = true;
    for (float x : tape.value(input).data)
      if (x != 0.0f && x != 1.0f) {
        binary = false;
        break;
      }
    opts.trace->push_back(LayerTrace{name, kind, binary});
  }

  Val conv_layer(const std::string& name, Val in, SignalKind kind, ops::Conv2dSpec spec) {
    trace(name, kind, in);
    if (opts.counter) {
      const Tensor& w = params.tensors.at(name + ".w");
      opts.counter->conv(name, tape.value(in), w.shape, spec, kind == SignalKind::Spike, true);
    }
    return ops::conv2d(tape, in, p(name + ".w"), p(name + ".b"), spec);
  }
  Val linear_layer(const std::string& name, Val in, SignalKind kind) {
    trace(name, kind, in);
    if (opts.counter) {
      const Tensor& w = params.tensors.at(name + ".w");
      opts.counter->linear(name, tape.value(in), w.shape, kind == SignalKind::Spike, true);
    }
    return ops::linear(tape, in, p(name + ".w"), p(name + ".b"));
  }
  Val bn_layer(const std::string& name, Val x) {
    if (opts.counter) opts.counter->tdbn(name, tape.value(x).numel());
    return tdbn(tape, x, p(name + ".gamma"), p(name + ".beta"), buf(name + ".rmean"),
                buf(name + ".rvar"), cfg.neuron, opts.train);
  }
  Val lif_layer(const std::string& name, Val currents) {
    if (opts.counter) opts.counter->lif(name, tape.value(currents).numel());
    return lif(tape, currents, cfg.neuron);
  }
  Val add_counted(const std::string& name, Val a, Val b) {
    if (opts.counter) opts.counter->elementwise(name, 0, tape.value(a).numel());
    return ops::add(tape, a, b);
  }

  Val res_block(const std::string& name, Val x, int64_t cin, int64_t ch, Val temb) {
    Val c1 = conv_layer(name + ".conv1", x, SignalKind::Spike, kConv3);
    c1 = bn_layer(name + ".bn1", c1);
    Val tp = linear_layer(name + ".tproj", temb, SignalKind::Spike);
    Shape cs = tape.value(c1).shape;
    Val tp5 = ops::reshape(tape, tp, {cs[0], 1, 1, ch, cs[4]});
    tp5 = ops::broadcast_to(tape, tp5, cs);
    c1 = add_counted(name + ".tadd", c1, tp5);
    Val s1 = lif_layer(name + ".lif1", c1);
    Val c2 = conv_layer(name + ".conv2", s1, SignalKind::Spike, kConv3);
    c2 = bn_layer(name + ".bn2", c2);
    // shortcut: identity when channels match (spikes add as unit currents),
    // 1x1 conv otherwise
    Val sc = (cin == ch) ? x : conv_layer(name + ".skip", x, SignalKind::Spike, kConv1);
    c2 = add_counted(name + ".radd", c2, sc);
    return lif_layer(name + ".lif2", c2);
  }

  Val downsample(const std::string& name, Val spikes, int64_t ch) {
    trace(name, SignalKind::Spike, spikes);
    if (opts.counter)
      opts.counter->pooled_conv(name, tape.value(spikes), ch, true, true);
    Val pooled = ops::avgpool2x2(tape, spikes);
    Val cur = ops::conv2d(tape, pooled, p(name + ".w"), p(name + ".b"), kConv1);
    cur = bn_layer(name + "_bn", cur);
    return lif_layer(name + ".lif", cur);
  }

  Val conv_bn_lif(const std::string& name, Val spikes, ops::Conv2dSpec spec) {
    Val cur = conv_layer(name, spikes, SignalKind::Spike, spec);
    cur = bn_layer(name + "_bn", cur);
    return lif_layer(name + ".lif", cur);
  }

  Val time_path(const std::vector<int>& t) {
    const int64_t batch = static_cast<int64_t>(t.size());
    const int64_t embed = cfg.embed_dim();
    Tensor base({batch, embed});
    for (int64_t bi = 0; bi < batch; ++bi) {
      Tensor e = time_embedding(t[static_cast<size_t>(bi)], static_cast<int>(embed));
      std::copy(e.data.begin(), e.data.end(), base.data.begin() + bi * embed);
    }
    Val enc = ops::replicate_time(tape, tape.leaf(std::move(base)), cfg.neuron.num_steps);
    Val h = linear_layer("time.l1", enc, SignalKind::Current);
    h = bn_layer("time.bn1", h);
    h = lif_layer("time.lif1", h);
    h = linear_layer("time.l2", h, SignalKind::Spike);
    h = bn_layer("time.bn2", h);
    return lif_layer("time.lif2", h);
  }

  // everything between the stem currents and the final conv's input spikes
  Val body(Val stem_current, Val temb) {
    const int levels = cfg.levels();
    const int nres = cfg.num_res_blocks;

    Val h = bn_layer("stem_bn", stem_current);
    h = lif_layer("stem.lif", h);

    std::vector<Val> top_res;  // every full-resolution ResBlock output
    std::vector<Val> level_out(static_cast<size_t>(levels));
    int64_t cur = cfg.level_channels(0);
    for (int l = 0; l < levels; ++l) {
      int64_t ch = cfg.level_channels(l);
      for (int k = 0; k < nres; ++k) {
        h = res_block(str("down", l, ".rb", k), h, k == 0 ? cur : ch, ch, temb);
        if (l == 0) top_res.push_back(h);
      }
      cur = ch;
      level_out[static_cast<size_t>(l)] = h;
      if (l < levels - 1) {
        h = downsample(str("down", l, ".ds"), h, ch);
      } else {
        h = conv_bn_lif(str("down", l, ".tail"), h, kConv3);
      }
    }
    for (int l = levels - 1; l >= 0; --l) {
      int64_t ch = cfg.level_channels(l);
      h = ops::concat_channels(tape, {h, level_out[static_cast<size_t>(l)]});
      for (int k = 0; k < nres; ++k) {
        h = res_block(str("up", l, ".rb", k), h, k == 0 ? cur + ch : ch, ch, temb);
        if (l == 0) top_res.push_back(h);
      }
      cur = ch;
      if (l > 0) {
        Val up = ops::upsample_nearest2x(tape, h);
        h = conv_bn_lif(str("up", l, ".us"), up, kConv3);
      } else {
        h = conv_bn_lif("up0.tail", h, kConv3);
      }
    }
    h = res_block("final.rb", h, cfg.level_channels(0), cfg.level_channels(0), temb);
    top_res.push_back(h);
    return ops::concat_channels(tape, top_res);
  }
};

std::vector<int> expand_t(const std::vector<int>& t, int64_t batch) {
  if (static_cast<int64_t>(t.size()) == batch) return t;
  SPD_REQUIRE(t.size() == 1, "unet: t has ", t.size(), " entries for batch ", batch);
  return std::vector<int>(static_cast<size_t>(batch), t[0]);
}

}  // namespace

UnetRun unet_forward(Tape& tape, ModelParams& params, const UNetConfig& cfg, Val x_signal,
                     const std::vector<int>& t, const ForwardOptions& opts) {
  cfg.validate();
  const Tensor& x = tape.value(x_signal);
  SPD_REQUIRE(x.rank() == 5, "unet: input must be rank-5 (B,H,W,C,S), got ", shape_str(x.shape));
  SPD_REQUIRE(x.dim(1) == cfg.image_size && x.dim(2) == cfg.image_size,
              "unet: spatial size ", x.dim(1), "x", x.dim(2), " does not match configured ",
              cfg.image_size);
  SPD_REQUIRE(x.dim(3) == cfg.in_channels, "unet: input has ", x.dim(3), " channels, expected ",
              cfg.in_channels);
  SPD_REQUIRE(x.dim(4) == cfg.neuron.num_steps, "unet: input has ", x.dim(4),
              " time steps, expected ", cfg.neuron.num_steps);

  UnetRun run;
  Ctx ctx{tape, params, cfg, opts, run.bound};
  std::vector<int> tb = expand_t(t, x.dim(0));
  Val temb = ctx.time_path(tb);
  run.stem_current = ctx.conv_layer("stem", x_signal, SignalKind::Current, kConv3);
  run.last_hidden = ctx.body(run.stem_current, temb);
  run.output = ctx.conv_layer("final", run.last_hidden, SignalKind::Spike, kConv1);
  return run;
}

Val unet_body_from_stem(Tape& tape, ModelParams& params, const UNetConfig& cfg, Val stem_current,
                        const std::vector<int>& t, const ForwardOptions& opts) {
  cfg.validate();
  std::map<std::string, Val> bound;
  Ctx ctx{tape, params, cfg, opts, bound};
  std::vector<int> tb = expand_t(t, tape.value(stem_current).dim(0));
  Val temb = ctx.time_path(tb);
  return ctx.body(stem_current, temb);
}

}  // namespace spikediff
