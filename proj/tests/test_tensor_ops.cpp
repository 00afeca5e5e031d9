#include <doctest.h>

#include "spikediff/ops.hpp"
#include "spikediff/rng.hpp"
#include "testing_util.hpp"

using namespace spikediff;
using namespace spikediff::testing;

TEST_CASE("conv2d: 1x1 identity kernel is the identity") {
  Rng rng(1);
  Tensor x = rng.normal_tensor({2, 4, 4, 3, 2});
  Tensor w = Tensor::zeros({3, 1, 1, 3});
  for (int64_t c = 0; c < 3; ++c) w.at({c, 0, 0, c}) = 1.0f;
  Tensor y = ops::conv2d_forward<float>(x, w, nullptr, {1, 0});
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d: all-ones 3x3 kernel on 3x3 ones, padding 1") {
  Tensor x = Tensor::full({1, 3, 3, 1, 1}, 1.0f);
  Tensor w = Tensor::full({1, 3, 3, 1}, 1.0f);
  Tensor y = ops::conv2d_forward<float>(x, w, nullptr, {1, 1});
  CHECK(y.at({0, 1, 1, 0, 0}) == doctest::Approx(9.0));
  CHECK(y.at({0, 0, 0, 0, 0}) == doctest::Approx(4.0));
  CHECK(y.at({0, 0, 2, 0, 0}) == doctest::Approx(4.0));
  CHECK(y.at({0, 1, 0, 0, 0}) == doctest::Approx(6.0));
}

TEST_CASE("conv2d matches the brute-force sum on random instances") {
  Rng rng(7);
  for (int i = 0; i < 8; ++i) {
    int64_t ci = 1 + static_cast<int64_t>(rng.uniform_int(0, 2));
    int64_t co = 1 + static_cast<int64_t>(rng.uniform_int(0, 3));
    int64_t k = rng.uniform() < 0.5 ? 1 : 3;
    int stride = rng.uniform() < 0.7 ? 1 : 2;
    int pad = k == 3 ? 1 : 0;
    Tensor x = rng.normal_tensor({2, 6, 6, ci, 2});
    Tensor w = rng.normal_tensor({co, k, k, ci});
    Tensor b = rng.normal_tensor({co});
    Tensor got = ops::conv2d_forward(x, w, &b, {stride, pad});
    Tensor want = conv2d_bruteforce(x, w, &b, {stride, pad});
    CHECK(max_abs_diff(got, want) < 1e-4);
  }
}

TEST_CASE("avgpool2x2 example") {
  Tensor x({1, 2, 2, 1, 1}, {1, 2, 3, 5});
  Tensor y = ops::avgpool2x2_forward(x);
  CHECK(y[0] == doctest::Approx(2.75));
}

TEST_CASE("shape violations are rejected with a diagnostic naming the op") {
  Rng rng(3);
  Tensor x = rng.normal_tensor({1, 4, 4, 2, 1});
  Tensor w = rng.normal_tensor({1, 3, 3, 5});  // wrong input channels
  CHECK_THROWS_WITH_AS(ops::conv2d_forward<float>(x, w, nullptr, {1, 1}),
                       doctest::Contains("conv2d"), std::runtime_error);

  Tape tape;
  Val a = tape.leaf(rng.normal_tensor({2, 3}));
  Val b = tape.leaf(rng.normal_tensor({3, 2}));
  CHECK_THROWS_WITH_AS(ops::add(tape, a, b), doctest::Contains("add"), std::runtime_error);

  Tensor odd = rng.normal_tensor({1, 3, 3, 1, 1});
  CHECK_THROWS_AS(ops::avgpool2x2_forward(odd), std::runtime_error);
}

TEST_CASE("backward: loss must be scalar, unused tensors get zero gradients") {
  Tape tape;
  Rng rng(5);
  Val x = tape.leaf(rng.normal_tensor({2, 2}), true);
  Val unused = tape.leaf(rng.normal_tensor({3}), true);
  Val y = ops::mul(tape, x, x);
  CHECK_THROWS_WITH_AS(tape.backward(y), doctest::Contains("scalar"), std::runtime_error);

  Val loss = ops::reduce_mean_all(tape, y);
  tape.backward(loss);
  Tensor gu = tape.grad(unused);
  for (int64_t i = 0; i < gu.numel(); ++i) CHECK(gu[i] == 0.0f);
}

TEST_CASE("backward: dL/dW of mean(W conv x) matches finite differences") {
  Rng rng(11);
  Tensor64 x = random_tensor64(rng, {1, 4, 4, 2, 1});
  Tensor64 w = random_tensor64(rng, {3, 3, 3, 2});
  // x fixed (constant leaf), W differentiated
  Tape64 tape;
  Val xv = tape.leaf(x, false);
  Val wv = tape.leaf(w, true);
  Val loss = ops::reduce_mean_all(tape, ops::conv2d(tape, xv, wv, Val{}, {1, 1}));
  tape.backward(loss);
  Tensor64 g = tape.grad(wv);

  double step = 1e-5;
  for (int64_t i = 0; i < w.numel(); i += 7) {  // spot-check a stride of entries
    Tensor64 wp = w, wm = w;
    wp[i] += step;
    wm[i] -= step;
    double up = ops::conv2d_forward<double>(x, wp, nullptr, {1, 1}).data[0];
    double dn = 0;
    {
      Tensor64 yu = ops::conv2d_forward<double>(x, wp, nullptr, {1, 1});
      double acc = 0;
      for (double v : yu.data) acc += v;
      up = acc / static_cast<double>(yu.numel());
      Tensor64 yd = ops::conv2d_forward<double>(x, wm, nullptr, {1, 1});
      acc = 0;
      for (double v : yd.data) acc += v;
      dn = acc / static_cast<double>(yd.numel());
    }
    double fd = (up - dn) / (2 * step);
    CHECK(std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}) < 1e-4);
  }
}

TEST_CASE("gradient oracle: independently differentiable primitives") {
  Rng rng(17);
  auto conv_loss = [](Tape64& t, const std::vector<Val>& v) {
    return ops::reduce_mean_all(t, ops::conv2d(t, v[0], v[1], v[2], {1, 1}));
  };
  for (int i = 0; i < 3; ++i)
    check_gradients({random_tensor64(rng, {1, 4, 4, 2, 2}), random_tensor64(rng, {2, 3, 3, 2}),
                     random_tensor64(rng, {2})},
                    conv_loss);

  auto linear_loss = [](Tape64& t, const std::vector<Val>& v) {
    return ops::reduce_mean_all(t, ops::linear(t, v[0], v[1], v[2]));
  };
  check_gradients({random_tensor64(rng, {2, 3, 2}), random_tensor64(rng, {4, 3}),
                   random_tensor64(rng, {4})},
                  linear_loss);

  check_gradients({random_tensor64(rng, {1, 4, 4, 2, 2})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    return ops::reduce_mean_all(t, ops::avgpool2x2(t, v[0]));
                  });
  check_gradients({random_tensor64(rng, {1, 3, 3, 2, 1})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    return ops::reduce_mean_all(t, ops::upsample_nearest2x(t, v[0]));
                  });
  check_gradients({random_tensor64(rng, {3, 4}), random_tensor64(rng, {3, 4})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    Val m = ops::mul(t, v[0], v[1]);
                    Val s = ops::add(t, m, ops::scale(t, v[1], -0.7));
                    return ops::reduce_mean_all(t, ops::mul(t, s, s));
                  });
  check_gradients({random_tensor64(rng, {1, 2, 2, 2, 2}), random_tensor64(rng, {1, 2, 2, 3, 2})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    Val c = ops::concat_channels(t, {v[0], v[1]});
                    return ops::reduce_mean_all(t, ops::mul(t, c, c));
                  });
  check_gradients({random_tensor64(rng, {1, 1, 1, 3, 1})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    Val b = ops::broadcast_to(t, v[0], {2, 4, 4, 3, 2});
                    return ops::reduce_mean_all(t, ops::mul(t, b, b));
                  });
  check_gradients({random_tensor64(rng, {2, 6})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    Val r = ops::reshape(t, v[0], {3, 4});
                    return ops::reduce_mean_all(t, ops::mul(t, r, r));
                  });
  check_gradients({random_tensor64(rng, {2, 3, 4})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    Val m = ops::reduce_mean_time(t, v[0]);
                    return ops::reduce_mean_all(t, ops::mul(t, m, m));
                  });
  check_gradients({random_tensor64(rng, {2, 3})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    Val r = ops::replicate_time(t, v[0], 3);
                    return ops::reduce_mean_all(t, ops::mul(t, r, r));
                  });
  check_gradients({random_tensor64(rng, {3, 5})},
                  [](Tape64& t, const std::vector<Val>& v) {
                    return ops::reduce_mean_all(t, ops::relu(t, v[0]));
                  });
}

TEST_CASE("spike-threshold backward equals the closed-form surrogate exactly") {
  Rng rng(23);
  const double v_th = 1.0, width = 1.0;
  Tensor u = rng.normal_tensor({64});
  Tensor upstream = rng.normal_tensor({64});

  Tape tape;
  Val uv = tape.leaf(u, true);
  Val o = ops::spike_threshold(tape, uv, v_th, width);
  // pull the given upstream gradient through the record directly
  Val weighted = ops::mul(tape, o, tape.leaf(upstream));
  Val loss = ops::scale(tape, ops::reduce_mean_all(tape, weighted), 64.0);
  tape.backward(loss);
  Tensor got = tape.grad(uv);

  for (int64_t i = 0; i < u.numel(); ++i) {
    float surr = std::max(0.0f, 1.0f - std::abs(u[i] - 1.0f) / 1.0f);
    CHECK(got[i] == upstream[i] * surr);  // exact, no tolerance
  }

  // forward emits exactly 0/1 with the >= threshold convention
  const Tensor& spikes = tape.value(o);
  for (int64_t i = 0; i < u.numel(); ++i)
    CHECK(spikes[i] == (u[i] >= 1.0f ? 1.0f : 0.0f));
}

TEST_CASE("conv2d is linear in its input (zero bias)") {
  Rng rng(29);
  Tensor x = rng.normal_tensor({1, 5, 5, 2, 2});
  Tensor y = rng.normal_tensor({1, 5, 5, 2, 2});
  Tensor w({3, 3, 3, 2});
  rng.fill_uniform(w, -0.25, 0.25);  // fan-in scale, as initialized weights
  const float a = 0.9f, b = -0.4f;
  Tensor mix({1, 5, 5, 2, 2});
  for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
  Tensor lhs = ops::conv2d_forward<float>(mix, w, nullptr, {1, 1});
  Tensor cx = ops::conv2d_forward<float>(x, w, nullptr, {1, 1});
  Tensor cy = ops::conv2d_forward<float>(y, w, nullptr, {1, 1});
  Tensor rhs(lhs.shape);
  for (int64_t i = 0; i < rhs.numel(); ++i) rhs[i] = a * cx[i] + b * cy[i];
  CHECK(max_abs_diff(lhs, rhs) < 1e-6);
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
  Rng rng(31);
  Tensor x = rng.normal_tensor({4, 8, 8, 3, 4});
  Tensor w = rng.normal_tensor({5, 3, 3, 3});
  Tensor b = rng.normal_tensor({5});
  Tensor y1 = ops::conv2d_forward(x, w, &b, {1, 1});
  Tensor y2 = ops::conv2d_forward(x, w, &b, {1, 1});
  CHECK(y1.data == y2.data);
}
