#include <doctest.h>

#include <cmath>

#include "spikediff/rng.hpp"
#include "spikediff/schedule.hpp"

using namespace spikediff;

TEST_CASE("cosine schedule: normalization, monotonicity, tail") {
  NoiseSchedule s = make_cosine_schedule(1000, 4);
  CHECK(s.alpha_bar[0] == 1.0);
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
  CHECK(s.alpha_bar[1000] > 0.0);
  CHECK(s.alpha_bar[1000] < 0.01);
  CHECK_THROWS_AS(make_cosine_schedule(0, 4), std::runtime_error);
}

TEST_CASE("velocity coefficients satisfy a^2 + b^2 = 1 to 1e-10") {
  NoiseSchedule s = make_cosine_schedule(1000, 4);
  for (int t = 1; t <= 1000; ++t) {
    auto [a, b] = ddim_coefficients(t, s);
    CHECK(std::abs(a * a + b * b - 1.0) < 1e-10);
  }
}

TEST_CASE("loss weights: gamma = alpha_bar, lambda = |b|/S (signed behind the switch)") {
  NoiseSchedule s = make_cosine_schedule(100, 4);
  for (int t = 1; t <= 100; ++t) {
    CHECK(s.gamma[t] == s.alpha_bar[t]);
    CHECK(s.lambda[t] == doctest::Approx(std::abs(s.b_coef[t]) / 4.0));
    CHECK(s.lambda[t] >= 0.0);
  }
  NoiseSchedule lit = make_cosine_schedule(100, 4, /*signed_lambda=*/true);
  bool any_negative = false;
  for (int t = 1; t <= 100; ++t) {
    CHECK(lit.lambda[t] == doctest::Approx(lit.b_coef[t] / 4.0));
    any_negative = any_negative || lit.lambda[t] < 0;
  }
  CHECK(any_negative);  // b_t < 0 under the velocity target
}

TEST_CASE("q_sample endpoints and closed-form value") {
  NoiseSchedule s = make_cosine_schedule(10, 4);
  Tensor x0 = Tensor::full({1, 1, 1, 1}, 1.0f);
  Tensor eps = Tensor::full({1, 1, 1, 1}, 2.0f);

  s.alpha_bar[1] = 1.0;
  CHECK(q_sample(x0, 1, eps, s)[0] == doctest::Approx(1.0));
  s.alpha_bar[1] = 0.0;
  CHECK(q_sample(x0, 1, eps, s)[0] == doctest::Approx(2.0));
  s.alpha_bar[1] = 0.25;
  CHECK(q_sample(x0, 1, eps, s)[0] == doctest::Approx(0.5 + std::sqrt(0.75) * 2.0));
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), std::runtime_error);
  CHECK_THROWS_AS(q_sample(x0, 11, eps, s), std::runtime_error);
}

TEST_CASE("velocity_target: endpoints, closed form, inversion identity") {
  NoiseSchedule s = make_cosine_schedule(10, 4);
  Tensor x0 = Tensor::full({1}, 1.0f);
  Tensor eps = Tensor::full({1}, 2.0f);

  s.alpha_bar[1] = 1.0;
  CHECK(velocity_target(x0, eps, 1, s)[0] == doctest::Approx(2.0));
  s.alpha_bar[1] = 0.25;
  CHECK(velocity_target(x0, eps, 1, s)[0] == doctest::Approx(0.1339746));

  // sqrt(ab) x_t - sqrt(1-ab) v_t = x0 for random draws
  Rng rng(42);
  NoiseSchedule c = make_cosine_schedule(50, 4);
  for (int trial = 0; trial < 200; ++trial) {
    int t = static_cast<int>(rng.uniform_int(1, 50));
    Tensor x({1}, {static_cast<float>(rng.normal())});
    Tensor e({1}, {static_cast<float>(rng.normal())});
    double ab = c.alpha_bar[t];
    float xt = q_sample(x, t, e, c)[0];
    float vt = velocity_target(x, e, t, c)[0];
    double rec = std::sqrt(ab) * xt - std::sqrt(1.0 - ab) * vt;
    CHECK(std::abs(rec - x[0]) < 1e-6);
  }
}

TEST_CASE("ddim coefficients: degenerate pair and the worked example") {
  auto [a_eq, b_eq] = ddim_pair_coefficients(0.37, 0.37);
  CHECK(a_eq == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(b_eq) < 1e-12);

  auto [a, b] = ddim_pair_coefficients(0.5, 0.25);
  CHECK(a == doctest::Approx(0.9659258).epsilon(1e-6));
  CHECK(b == doctest::Approx(-0.2588190).epsilon(1e-6));
  CHECK(std::abs(a * a + b * b - 1.0) < 1e-10);
}

// independent oracle: the deterministic-sampler update written directly from
// its x0/eps form, with eps reconstructed from the velocity
namespace {
double reference_step(double ab_prev, double ab, double x_t, double v) {
  double eps_hat = std::sqrt(1.0 - ab) * x_t + std::sqrt(ab) * v;
  double x0_hat = (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}
}  // namespace

TEST_CASE("a_t x_t + b_t v reproduces the x0/eps-form update to 1e-10") {
  Rng rng(4242);
  for (int trial = 0; trial < 1000; ++trial) {
    double ab = rng.uniform(1e-4, 1.0);
    double ab_prev = rng.uniform(ab, 1.0);
    double x_t = rng.normal();
    double v = rng.normal();
    auto [a, b] = ddim_pair_coefficients(ab_prev, ab);
    double mine = a * x_t + b * v;
    double want = reference_step(ab_prev, ab, x_t, v);
    CHECK(std::abs(mine - want) < 1e-10);
  }
}

TEST_CASE("ddim_step: zero output, no-op step, chained contraction") {
  NoiseSchedule s = make_cosine_schedule(20, 4);
  Rng rng(7);
  Tensor x = rng.normal_tensor({2, 3, 3, 1});
  Tensor zero = Tensor::zeros(x.shape);

  Tensor y = ddim_step(x, zero, 5, s);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y[i] == doctest::Approx(s.a_coef[5] * x[i]));

  NoiseSchedule flat = s;
  flat.a_coef[5] = 1.0;
  flat.b_coef[5] = 0.0;
  Tensor same = ddim_step(x, rng.normal_tensor(x.shape), 5, flat);
  CHECK(max_abs_diff(same, x) == 0.0);

  // chaining every step with a zero net contracts by the product of a_t
  Tensor cur = x;
  double prod = 1.0;
  for (int t = 20; t >= 1; --t) {
    cur = ddim_step(cur, zero, t, s);
    prod *= s.a_coef[t];
  }
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(cur[i] == doctest::Approx(prod * x[i]).epsilon(1e-5));

  CHECK_THROWS_AS(ddim_step(x, zero, 0, s), std::runtime_error);
  CHECK_THROWS_AS(ddim_step(x, zero, 21, s), std::runtime_error);
}

TEST_CASE("trajectory consistency: exact v_t steps x_t onto q_sample at t-1") {
  NoiseSchedule s = make_cosine_schedule(64, 4);
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    int t = static_cast<int>(rng.uniform_int(2, 64));
    Tensor x0 = rng.normal_tensor({2, 4, 4, 1});
    Tensor eps = rng.normal_tensor(x0.shape);
    Tensor x_t = q_sample(x0, t, eps, s);
    Tensor v_t = velocity_target(x0, eps, t, s);
    Tensor got = ddim_step(x_t, v_t, t, s);
    Tensor want = q_sample(x0, t - 1, eps, s);
    CHECK(max_abs_diff(got, want) < 1e-5);
  }
}

TEST_CASE("inference_steps: strictly increasing sub-sequences ending at T") {
  auto s10 = inference_steps(100, 10);
  CHECK(s10.size() == 10);
  CHECK(s10.back() == 100);
  for (size_t i = 1; i < s10.size(); ++i) CHECK(s10[i] > s10[i - 1]);
  CHECK(s10.front() >= 1);

  auto full = inference_steps(16, 16);
  for (int i = 0; i < 16; ++i) CHECK(full[static_cast<size_t>(i)] == i + 1);
  CHECK_THROWS_AS(inference_steps(10, 11), std::runtime_error);
  CHECK_THROWS_AS(inference_steps(10, 0), std::runtime_error);
}
