#include <arm_neon.h>

#include "mash/kernels.hpp"

namespace mash::kernels::detail {

void block4_neon(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                 std::size_t c0, std::size_t c1, double* acc) {
  const std::size_t w = c1 - c0;
  std::size_t c = 0;
  // 4 draws x 8 columns in 16 registers across the cluster loop
  for (; c + 8 <= w; c += 8) {
    float64x2_t a[4][4];
    for (auto& d : a)
      for (auto& v : d) v = vdupq_n_f64(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = Q + i * cols + c0 + c;
      const float64x2_t q0 = vld1q_f64(row), q1 = vld1q_f64(row + 2);
      const float64x2_t q2 = vld1q_f64(row + 4), q3 = vld1q_f64(row + 6);
      for (std::size_t k = 0; k < 4; ++k) {
        const float64x2_t x = vdupq_n_f64(xi4[k * n + i]);
        a[k][0] = vfmaq_f64(a[k][0], x, q0);
        a[k][1] = vfmaq_f64(a[k][1], x, q1);
        a[k][2] = vfmaq_f64(a[k][2], x, q2);
        a[k][3] = vfmaq_f64(a[k][3], x, q3);
      }
    }
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t v = 0; v < 4; ++v) vst1q_f64(acc + k * w + c + 2 * v, a[k][v]);
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
