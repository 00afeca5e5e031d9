#pragma once

#include <cmath>
#include <cstring>
#include <initializer_list>

#include "spikediff/common.hpp"

namespace spikediff {

// Dense row-major value array. 32-bit float is the working precision;
// the double instantiation exists so gradient checks can run in 64-bit.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    SPD_REQUIRE(static_cast<int64_t>(data.size()) == shape_numel(shape),
                "tensor: data length ", data.size(), " does not match shape ", shape_str(shape));
  }

  static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
  static TensorT full(Shape s, T v) {
    TensorT t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  int64_t offset(std::initializer_list<int64_t> idx) const {
    SPD_REQUIRE(static_cast<int>(idx.size()) == rank(), "tensor: index rank mismatch");
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) off = off * shape[static_cast<size_t>(i++)] + v;
    return off;
  }
  T& at(std::initializer_list<int64_t> idx) { return data[static_cast<size_t>(offset(idx))]; }
  const T& at(std::initializer_list<int64_t> idx) const {
    return data[static_cast<size_t>(offset(idx))];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  SPD_REQUIRE(a.same_shape(b), "max_abs_diff: shape mismatch ", shape_str(a.shape), " vs ",
              shape_str(b.shape));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

}  // namespace spikediff
