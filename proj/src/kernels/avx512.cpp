// Compiled with -mavx512f -mfma; only reached when the CPU reports AVX-512F.
#include <immintrin.h>

#include <algorithm>

#include "variants.hpp"

namespace nep::kernels::detail {
namespace {

// Handles a column panel of width 32 (two full vectors) or a narrower panel
// through per-vector lane masks. Masked lanes are neither loaded nor stored.
template <int MR>
inline void micro_32(std::size_t k, const float* a, std::size_t lda, const float* b,
                     std::size_t ldb, float* c, std::size_t ldc, bool accumulate,
                     __mmask16 m0, __mmask16 m1) {
  __m512 lo[MR], hi[MR];
  for (int r = 0; r < MR; ++r) {
    if (accumulate) {
      lo[r] = _mm512_maskz_loadu_ps(m0, c + r * ldc);
      hi[r] = _mm512_maskz_loadu_ps(m1, c + r * ldc + 16);
    } else {
      lo[r] = _mm512_setzero_ps();
      hi[r] = _mm512_setzero_ps();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m512 b0 = _mm512_maskz_loadu_ps(m0, b + p * ldb);
    const __m512 b1 = _mm512_maskz_loadu_ps(m1, b + p * ldb + 16);
    for (int r = 0; r < MR; ++r) {
      const __m512 av = _mm512_set1_ps(a[r * lda + p]);
      lo[r] = _mm512_fmadd_ps(av, b0, lo[r]);
      hi[r] = _mm512_fmadd_ps(av, b1, hi[r]);
    }
  }
  for (int r = 0; r < MR; ++r) {
    _mm512_mask_storeu_ps(c + r * ldc, m0, lo[r]);
    _mm512_mask_storeu_ps(c + r * ldc + 16, m1, hi[r]);
  }
}

using MicroFn = void (*)(std::size_t, const float*, std::size_t, const float*, std::size_t, float*,
                         std::size_t, bool, __mmask16, __mmask16);

constexpr int kMr = 8;
constexpr MicroFn kMicro[kMr + 1] = {nullptr,      &micro_32<1>, &micro_32<2>,
                                     &micro_32<3>, &micro_32<4>, &micro_32<5>,
                                     &micro_32<6>, &micro_32<7>, &micro_32<8>};

inline __mmask16 lane_mask(std::size_t lanes) {
  return lanes >= 16 ? __mmask16(0xFFFF) : __mmask16((1u << lanes) - 1u);
}

void gemm_avx512(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                 const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  for (std::size_t j = 0; j < n; j += 32) {
    const std::size_t width = std::min<std::size_t>(32, n - j);
    const __mmask16 m0 = lane_mask(width);
    const __mmask16 m1 = lane_mask(width > 16 ? width - 16 : 0);
    for (std::size_t i = 0; i < m; i += kMr) {
      const std::size_t rows = std::min<std::size_t>(kMr, m - i);
      kMicro[rows](k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate, m0, m1);
    }
  }
}

float dot_avx512(const float* x, const float* y, std::size_t n) {
  __m512 s0 = _mm512_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16)
    s0 = _mm512_fmadd_ps(_mm512_loadu_ps(x + i), _mm512_loadu_ps(y + i), s0);
  if (i < n) {
    const __mmask16 m = lane_mask(n - i);
    s0 = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(m, x + i), _mm512_maskz_loadu_ps(m, y + i), s0);
  }
  return _mm512_reduce_add_ps(s0);
}

void axpy_avx512(float alpha, const float* x, float* y, std::size_t n) {
  const __m512 av = _mm512_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(y + i, _mm512_fmadd_ps(av, _mm512_loadu_ps(x + i), _mm512_loadu_ps(y + i)));
  if (i < n) {
    const __mmask16 m = lane_mask(n - i);
    _mm512_mask_storeu_ps(
        y + i, m, _mm512_fmadd_ps(av, _mm512_maskz_loadu_ps(m, x + i), _mm512_maskz_loadu_ps(m, y + i)));
  }
}

}  // namespace

KernelTable avx512_table() { return {&gemm_avx512, &dot_avx512, &axpy_avx512}; }

}  // namespace nep::kernels::detail
