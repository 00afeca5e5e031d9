#include <doctest.h>

#include <cmath>
#include <set>

#include "spikediff/unet.hpp"
#include "testing_util.hpp"

using namespace spikediff;
using namespace spikediff::testing;

namespace {
UNetConfig tiny_cfg(int image = 8, int base = 8, std::vector<int> mults = {1, 2}) {
  UNetConfig cfg;
  cfg.image_size = image;
  cfg.in_channels = 1;
  cfg.base_channels = base;
  cfg.channel_multipliers = std::move(mults);
  cfg.neuron.num_steps = 4;
  return cfg;
}

void randomize_final_conv(ModelParams& params, uint64_t seed) {
  Rng rng(seed);
  Tensor& w = params.tensors.at("final.w");
  double bound = 1.0 / std::sqrt(static_cast<double>(w.dim(3)));
  rng.fill_uniform(w, -bound, bound);
  rng.fill_uniform(params.tensors.at("final.b"), -0.05, 0.05);
}
}  // namespace

TEST_CASE("time_embedding: zeros at t=0, full length, no collisions") {
  Tensor e0 = time_embedding(0, 64);
  CHECK(e0.numel() == 64);
  for (int i = 0; i < 32; ++i) {
    CHECK(e0[i] == 0.0f);       // sine half
    CHECK(e0[32 + i] == 1.0f);  // cosine half
  }
  CHECK(time_embedding(123, 10).numel() == 10);
  CHECK_THROWS_WITH_AS(time_embedding(3, 7), doctest::Contains("even"), std::runtime_error);

  // pairwise distinct over the full desk range
  const int T = 100, dim = 64;
  std::vector<Tensor> embs;
  for (int t = 1; t <= T; ++t) embs.push_back(time_embedding(t, dim));
  double min_l2 = 1e30;
  for (int i = 0; i < T; ++i)
    for (int j = i + 1; j < T; ++j) {
      double d2 = 0;
      for (int k = 0; k < dim; ++k) {
        double d = embs[i][k] - embs[j][k];
        d2 += d * d;
      }
      min_l2 = std::min(min_l2, std::sqrt(d2));
    }
  CHECK(min_l2 > 0.0);
}

TEST_CASE("build_unet: paper-scale parameter count lands near 55.3M") {
  UNetConfig cfg;
  cfg.image_size = 32;
  cfg.in_channels = 3;
  cfg.base_channels = 128;
  cfg.channel_multipliers = {1, 2, 3, 4};
  cfg.neuron.num_steps = 4;
  ModelParams params = build_unet(cfg, 1);
  double count = static_cast<double>(params.param_count());
  CHECK(count > 55.3e6 * 0.85);
  CHECK(count < 55.3e6 * 1.15);
}

TEST_CASE("build_unet: desk config stays under 1M parameters") {
  UNetConfig cfg = tiny_cfg(16, 32, {1, 2});
  ModelParams params = build_unet(cfg, 1);
  CHECK(params.param_count() < 1000000);
  CHECK(params.param_count() > 0);
}

TEST_CASE("build_unet: determinism in the seed") {
  UNetConfig cfg = tiny_cfg();
  ModelParams a = build_unet(cfg, 99);
  ModelParams b = build_unet(cfg, 99);
  ModelParams c = build_unet(cfg, 100);
  REQUIRE(a.tensors.size() == b.tensors.size());
  bool all_equal = true, any_diff_c = false;
  for (const auto& [name, t] : a.tensors) {
    all_equal = all_equal && (t.data == b.tensors.at(name).data);
    any_diff_c = any_diff_c || (t.data != c.tensors.at(name).data);
  }
  CHECK(all_equal);
  CHECK(any_diff_c);

  // invalid divisibility rejected
  UNetConfig bad = tiny_cfg(10, 8, {1, 2, 4});
  CHECK_THROWS_WITH_AS(build_unet(bad, 1), doctest::Contains("divisible"), std::runtime_error);
}

TEST_CASE("unet_forward: shape contract and determinism") {
  UNetConfig cfg = tiny_cfg();
  ModelParams params = build_unet(cfg, 5);
  randomize_final_conv(params, 6);
  Rng rng(7);
  Tensor x = rng.normal_tensor({2, 8, 8, 1, 4});

  Tape t1(false);
  UnetRun r1 = unet_forward(t1, params, cfg, t1.leaf(x), {3});
  CHECK(t1.value(r1.output).shape == x.shape);

  Tape t2(false);
  UnetRun r2 = unet_forward(t2, params, cfg, t2.leaf(x), {3});
  CHECK(t1.value(r1.output).data == t2.value(r2.output).data);
}

TEST_CASE("unet_forward: the step index changes the output") {
  UNetConfig cfg = tiny_cfg();
  ModelParams params = build_unet(cfg, 5);
  randomize_final_conv(params, 8);
  Rng rng(9);
  Tensor one = rng.normal_tensor({1, 8, 8, 1, 4});
  Tensor x({4, 8, 8, 1, 4});
  for (int b = 0; b < 4; ++b) std::copy(one.data.begin(), one.data.end(),
                                        x.data.begin() + b * one.numel());

  // Train mode with per-element steps, as the training loop samples them:
  // tdBN normalizes over the batch, so the t-diversity inside the batch is
  // what drives the freshly initialized time path to threshold scale.
  ForwardOptions train_opts;
  train_opts.train = true;
  Tape tape(false);
  const Tensor& y = tape.value(
      unet_forward(tape, params, cfg, tape.leaf(x), {3, 77, 40, 90}, train_opts).output);
  int64_t per = one.numel();
  double l2 = 0;
  for (int64_t i = 0; i < per; ++i) {
    double d = y[i] - y[per + i];  // element 0 (t=3) vs element 1 (t=77)
    l2 += d * d;
  }
  CHECK(l2 > 0.0);
}

TEST_CASE("unet_forward: only the stem and the first time linear see real values") {
  UNetConfig cfg = tiny_cfg();
  ModelParams params = build_unet(cfg, 5);
  Rng rng(11);
  Tensor x = rng.normal_tensor({1, 8, 8, 1, 4});

  std::vector<LayerTrace> trace;
  ForwardOptions opts;
  opts.trace = &trace;
  Tape tape(false);
  unet_forward(tape, params, cfg, tape.leaf(x), {5}, opts);

  REQUIRE(!trace.empty());
  std::set<std::string> real_inputs;
  for (const auto& e : trace) {
    if (e.input_kind == SignalKind::Current) {
      real_inputs.insert(e.name);
    } else {
      CHECK(e.input_binary);  // every spike-kind consumer sees exactly {0,1}
    }
  }
  CHECK(real_inputs == std::set<std::string>{"stem", "time.l1"});
}

TEST_CASE("unet_forward: degenerate signals stay finite") {
  UNetConfig cfg = tiny_cfg();
  ModelParams params = build_unet(cfg, 5);
  randomize_final_conv(params, 12);
  for (float fill : {0.0f, 1.0f}) {
    Tensor x = Tensor::full({1, 8, 8, 1, 4}, fill);
    Tape tape(false);
    const Tensor& y = tape.value(unet_forward(tape, params, cfg, tape.leaf(x), {2}).output);
    CHECK(y.all_finite());
  }
}

TEST_CASE("unet_forward: input validation") {
  UNetConfig cfg = tiny_cfg();
  ModelParams params = build_unet(cfg, 5);
  Rng rng(13);
  Tape tape(false);
  Val wrong_size = tape.leaf(rng.normal_tensor({1, 16, 16, 1, 4}));
  CHECK_THROWS_WITH_AS(unet_forward(tape, params, cfg, wrong_size, {1}),
                       doctest::Contains("spatial"), std::runtime_error);
  Val wrong_steps = tape.leaf(rng.normal_tensor({1, 8, 8, 1, 2}));
  CHECK_THROWS_WITH_AS(unet_forward(tape, params, cfg, wrong_steps, {1}),
                       doctest::Contains("time steps"), std::runtime_error);
}

TEST_CASE("single-level config builds and runs") {
  UNetConfig cfg = tiny_cfg(8, 8, {1});
  ModelParams params = build_unet(cfg, 21);
  Rng rng(22);
  Tensor x = rng.normal_tensor({1, 8, 8, 1, 4});
  Tape tape(false);
  CHECK(tape.value(unet_forward(tape, params, cfg, tape.leaf(x), {1}).output).shape == x.shape);
}
