#include <immintrin.h>

#include "mash/kernels.hpp"

namespace mash::kernels::detail {

void block4_avx2(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                 std::size_t c0, std::size_t c1, double* acc) {
  const std::size_t w = c1 - c0;
  std::size_t c = 0;
  // 4 draws x 8 columns held in registers across the cluster loop
  for (; c + 8 <= w; c += 8) {
    __m256d a00 = _mm256_setzero_pd(), a01 = _mm256_setzero_pd();
    __m256d a10 = _mm256_setzero_pd(), a11 = _mm256_setzero_pd();
    __m256d a20 = _mm256_setzero_pd(), a21 = _mm256_setzero_pd();
    __m256d a30 = _mm256_setzero_pd(), a31 = _mm256_setzero_pd();
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = Q + i * cols + c0 + c;
      const __m256d q0 = _mm256_loadu_pd(row);
      const __m256d q1 = _mm256_loadu_pd(row + 4);
      const __m256d x0 = _mm256_broadcast_sd(xi4 + i);
      const __m256d x1 = _mm256_broadcast_sd(xi4 + n + i);
      const __m256d x2 = _mm256_broadcast_sd(xi4 + 2 * n + i);
      const __m256d x3 = _mm256_broadcast_sd(xi4 + 3 * n + i);
      a00 = _mm256_fmadd_pd(x0, q0, a00);
      a01 = _mm256_fmadd_pd(x0, q1, a01);
      a10 = _mm256_fmadd_pd(x1, q0, a10);
      a11 = _mm256_fmadd_pd(x1, q1, a11);
      a20 = _mm256_fmadd_pd(x2, q0, a20);
      a21 = _mm256_fmadd_pd(x2, q1, a21);
      a30 = _mm256_fmadd_pd(x3, q0, a30);
      a31 = _mm256_fmadd_pd(x3, q1, a31);
    }
    _mm256_storeu_pd(acc + c, a00);
    _mm256_storeu_pd(acc + c + 4, a01);
    _mm256_storeu_pd(acc + w + c, a10);
    _mm256_storeu_pd(acc + w + c + 4, a11);
    _mm256_storeu_pd(acc + 2 * w + c, a20);
    _mm256_storeu_pd(acc + 2 * w + c + 4, a21);
    _mm256_storeu_pd(acc + 3 * w + c, a30);
    _mm256_storeu_pd(acc + 3 * w + c + 4, a31);
  }
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t r = c; r < w; ++r) acc[k * w + r] = 0.0;
  for (std::size_t i = 0; i < n && c < w; ++i) {
    const double* row = Q + i * cols + c0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double x = xi4[k * n + i];
      for (std::size_t r = c; r < w; ++r) acc[k * w + r] += x * row[r];
    }
  }
}

}  // namespace mash::kernels::detail
