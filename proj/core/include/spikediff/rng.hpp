#pragma once

#include <cmath>
#include <random>

#include "spikediff/tensor.hpp"

namespace spikediff {

// Seeded generator used everywhere randomness is needed. Gaussians come from
// Box-Muller over the raw 64-bit stream rather than std::normal_distribution,
// so a seed pins the exact sequence independent of the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in (0, 1]
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(gen_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void fill_normal(TensorT<T>& t) {
    for (auto& v : t.data) v = static_cast<T>(normal());
  }
  template <typename T>
  void fill_uniform(TensorT<T>& t, double lo, double hi) {
    for (auto& v : t.data) v = static_cast<T>(uniform(lo, hi));
  }

  template <typename T = float>
  TensorT<T> normal_tensor(Shape s) {
    TensorT<T> t(std::move(s));
    fill_normal(t);
    return t;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0;
  bool have_spare_ = false;
};

}  // namespace spikediff
