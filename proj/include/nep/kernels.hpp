#pragma once
// Dense float kernels with runtime ISA selection.
//
// Every kernel has a scalar reference and vectorized variants. GEMM and AXPY
// accumulate each output element sequentially with fused multiply-add, so the
// scalar and vector variants agree bit-for-bit, and the value of a row never
// depends on how many rows are processed together. DOT uses lane-parallel
// partial sums and only agrees with the reference to rounding.

#include <cmath>
#include <cstddef>
#include <string_view>

namespace nep::kernels {

enum class Isa { Scalar, Avx2, Avx512 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  // C[m x n] (+)= A[m x k] * B[k x n], row-major with leading dimensions.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
               const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate);
  float (*dot)(const float* x, const float* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
};

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);

// Best supported ISA unless overridden by force_isa() or NEP_ISA=scalar|avx2|avx512.
Isa active_isa();
const KernelTable& active();
void force_isa(Isa isa);

// Typed front-ends. float goes through the active table; double always runs
// the scalar template (used by gradient checks).
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = std::fma(av, brow[j], crow[j]);
    }
  }
}

template <>
inline void gemm<float>(std::size_t m, std::size_t n, std::size_t k, const float* a,
                        std::size_t lda, const float* b, std::size_t ldb, float* c,
                        std::size_t ldc, bool accumulate) {
  active().gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <class T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s = std::fma(x[i], y[i], s);
  return s;
}

template <>
inline float dot<float>(const float* x, const float* y, std::size_t n) {
  return active().dot(x, y, n);
}

template <class T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <>
inline void axpy<float>(float alpha, const float* x, float* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}

}  // namespace nep::kernels
