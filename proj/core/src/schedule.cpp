#include "spikediff/schedule.hpp"

#include <cmath>

namespace spikediff {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kCosineOffset = 0.008;
constexpr double kAlphaBarFloor = 1e-8;

Tensor affine_combine(const Tensor& x, double cx, const Tensor& y, double cy) {
  SPD_REQUIRE(x.same_shape(y), "schedule: shape mismatch ", shape_str(x.shape), " vs ",
              shape_str(y.shape));
  Tensor out(x.shape);
  const float a = static_cast<float>(cx), b = static_cast<float>(cy);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}
}  // namespace

NoiseSchedule make_cosine_schedule(int T, int S, bool signed_lambda) {
  SPD_REQUIRE(T >= 1, "schedule: T must be >= 1, got ", T);
  SPD_REQUIRE(S >= 1, "schedule: S must be >= 1, got ", S);
  NoiseSchedule sched;
  sched.T = T;
  sched.S = S;
  sched.alpha_bar.resize(static_cast<size_t>(T) + 1);
  sched.a_coef.assign(static_cast<size_t>(T) + 1, 0.0);
  sched.b_coef.assign(static_cast<size_t>(T) + 1, 0.0);
  sched.gamma.resize(static_cast<size_t>(T) + 1);
  sched.lambda.assign(static_cast<size_t>(T) + 1, 0.0);

  auto f = [&](double t) {
    double arg = ((t / T + kCosineOffset) / (1.0 + kCosineOffset)) * kPi / 2.0;
    double c = std::cos(arg);
    return c * c;
  };
  const double f0 = f(0.0);
  for (int t = 0; t <= T; ++t) {
    double ab = f(static_cast<double>(t)) / f0;
    if (ab < kAlphaBarFloor) ab = kAlphaBarFloor;
    sched.alpha_bar[static_cast<size_t>(t)] = ab;
  }
  sched.alpha_bar[0] = 1.0;

  for (int t = 1; t <= T; ++t) {
    auto [a, b] = ddim_pair_coefficients(sched.alpha_bar[static_cast<size_t>(t) - 1],
                                         sched.alpha_bar[static_cast<size_t>(t)]);
    sched.a_coef[static_cast<size_t>(t)] = a;
    sched.b_coef[static_cast<size_t>(t)] = b;
    sched.lambda[static_cast<size_t>(t)] = (signed_lambda ? b : std::abs(b)) / S;
  }
  for (int t = 0; t <= T; ++t)
    sched.gamma[static_cast<size_t>(t)] = sched.alpha_bar[static_cast<size_t>(t)];
  return sched;
}

std::pair<double, double> ddim_pair_coefficients(double alpha_bar_prev, double alpha_bar_t) {
  SPD_REQUIRE(alpha_bar_prev > 0 && alpha_bar_prev <= 1.0, "ddim: alpha_bar_prev out of (0,1]: ",
              alpha_bar_prev);
  SPD_REQUIRE(alpha_bar_t > 0 && alpha_bar_t <= 1.0, "ddim: alpha_bar_t out of (0,1]: ",
              alpha_bar_t);
  const double c = std::sqrt(alpha_bar_t), s = std::sqrt(1.0 - alpha_bar_t);
  const double cp = std::sqrt(alpha_bar_prev), sp = std::sqrt(1.0 - alpha_bar_prev);
  // a = cos(theta_t - theta_prev), b = -sin(theta_t - theta_prev) with
  // cos(theta) = sqrt(alpha_bar); hence a^2 + b^2 = 1.
  double a = cp * c + sp * s;
  double b = c * sp - cp * s;
  return {a, b};
}

std::pair<double, double> ddim_coefficients(int t, const NoiseSchedule& sched) {
  sched.check_t(t);
  return {sched.a_coef[static_cast<size_t>(t)], sched.b_coef[static_cast<size_t>(t)]};
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_t(t);
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  return affine_combine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor velocity_target(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched) {
  sched.check_t(t);
  const double ab = sched.alpha_bar[static_cast<size_t>(t)];
  return affine_combine(eps, std::sqrt(ab), x0, -std::sqrt(1.0 - ab));
}

Tensor ddim_step(const Tensor& x_t, const Tensor& net_out, int t, const NoiseSchedule& sched) {
  sched.check_t(t);
  return affine_combine(x_t, sched.a_coef[static_cast<size_t>(t)], net_out,
                        sched.b_coef[static_cast<size_t>(t)]);
}

Tensor ddim_step_between(const Tensor& x_t, const Tensor& net_out, int t_hi, int t_lo,
                         const NoiseSchedule& sched) {
  sched.check_t(t_hi);
  SPD_REQUIRE(t_lo >= 0 && t_lo < t_hi, "ddim: invalid jump ", t_hi, " -> ", t_lo);
  auto [a, b] = ddim_pair_coefficients(sched.alpha_bar[static_cast<size_t>(t_lo)],
                                       sched.alpha_bar[static_cast<size_t>(t_hi)]);
  return affine_combine(x_t, a, net_out, b);
}

std::vector<int> inference_steps(int T, int k) {
  SPD_REQUIRE(k >= 1 && k <= T, "inference_steps: need 1 <= k <= T, got k=", k, " T=", T);
  std::vector<int> steps(static_cast<size_t>(k));
  for (int i = 1; i <= k; ++i)
    steps[static_cast<size_t>(i) - 1] = static_cast<int>(std::llround(
        static_cast<double>(T) * i / k));
  for (size_t i = 1; i < steps.size(); ++i)
    SPD_REQUIRE(steps[i] > steps[i - 1], "inference_steps: sub-sequence not strictly increasing");
  SPD_REQUIRE(steps[0] >= 1, "inference_steps: first step must be >= 1");
  return steps;
}

}  // namespace spikediff
