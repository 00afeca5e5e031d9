#pragma once

// Internal GEMM shim over OpenBLAS. BLAS threading is pinned to 1 so outer
// batch parallelism composes without oversubscription and results stay
// reproducible run to run.

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace spikediff {
namespace detail {

inline void pin_blas_threads() {
  static bool done = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)done;
}

// C(M,N) += or = A(M,K) * B(K,N), all row-major
inline void gemm(bool accumulate, int64_t m, int64_t n, int64_t k, const float* a,
                 const float* b, float* c) {
  pin_blas_threads();
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a, static_cast<int>(k), b,
              static_cast<int>(n), accumulate ? 1.0f : 0.0f, c, static_cast<int>(n));
}
inline void gemm(bool accumulate, int64_t m, int64_t n, int64_t k, const double* a,
                 const double* b, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a, static_cast<int>(k), b,
              static_cast<int>(n), accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

// C(M,N) += or = A^T(M,K) * B(K,N) with A stored (K,M) row-major
inline void gemm_at(bool accumulate, int64_t m, int64_t n, int64_t k, const float* a,
                    const float* b, float* c) {
  pin_blas_threads();
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0f, a, static_cast<int>(m), b, static_cast<int>(n),
              accumulate ? 1.0f : 0.0f, c, static_cast<int>(n));
}
inline void gemm_at(bool accumulate, int64_t m, int64_t n, int64_t k, const double* a,
                    const double* b, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(m), b, static_cast<int>(n),
              accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

// C(M,N) += or = A(M,K) * B^T(K,N) with B stored (N,K) row-major
inline void gemm_bt(bool accumulate, int64_t m, int64_t n, int64_t k, const float* a,
                    const float* b, float* c) {
  pin_blas_threads();
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0f, a, static_cast<int>(k), b, static_cast<int>(k),
              accumulate ? 1.0f : 0.0f, c, static_cast<int>(n));
}
inline void gemm_bt(bool accumulate, int64_t m, int64_t n, int64_t k, const double* a,
                    const double* b, double* c) {
  pin_blas_threads();
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(k), b, static_cast<int>(k),
              accumulate ? 1.0 : 0.0, c, static_cast<int>(n));
}

}  // namespace detail
}  // namespace spikediff
