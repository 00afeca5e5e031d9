#pragma once

#include "spikediff/tensor.hpp"

namespace spikediff {

// Precomputed noise schedule. Index t runs 0..T with alpha_bar[0] = 1;
// a_coef[t]/b_coef[t] are the deterministic-step coefficients carrying x_t to
// x_{t-1} under the velocity target, gamma[t]/lambda[t] the loss weights.
// Everything is kept in double so the trigonometric identities hold to 1e-10.
struct NoiseSchedule {
  int T = 0;
  int S = 1;  // SNN time steps, enters lambda
  std::vector<double> alpha_bar;  // size T+1
  std::vector<double> a_coef;     // size T+1, [0] unused
  std::vector<double> b_coef;     // size T+1, [0] unused
  std::vector<double> gamma;      // size T+1
  std::vector<double> lambda;     // size T+1

  void check_t(int t) const {
    SPD_REQUIRE(t >= 1 && t <= T, "schedule: step t=", t, " out of range 1..", T);
  }
};

// alpha_bar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), s = 0.008,
// clamped below at 1e-8. gamma_t = alpha_bar_t; lambda_t = |b_t| / S
// (or the literal signed b_t / S when signed_lambda is set).
NoiseSchedule make_cosine_schedule(int T, int S, bool signed_lambda = false);

// velocity-target step coefficients for an arbitrary (alpha_bar_prev, alpha_bar_t) pair
std::pair<double, double> ddim_pair_coefficients(double alpha_bar_prev, double alpha_bar_t);

// coefficients for the adjacent step t -> t-1
std::pair<double, double> ddim_coefficients(int t, const NoiseSchedule& sched);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// v_t = sqrt(abar_t) eps - sqrt(1 - abar_t) x0
Tensor velocity_target(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& sched);

// x_{t-1} = a_t x_t + b_t net_out
Tensor ddim_step(const Tensor& x_t, const Tensor& net_out, int t, const NoiseSchedule& sched);

// same linear combination for a (t_hi -> t_lo) jump of a sub-sequenced sampler
Tensor ddim_step_between(const Tensor& x_t, const Tensor& net_out, int t_hi, int t_lo,
                         const NoiseSchedule& sched);

// strictly increasing uniform-stride sub-sequence of 1..T with k entries
std::vector<int> inference_steps(int T, int k);

}  // namespace spikediff
