#include <algorithm>

#include "mash/kernels.hpp"

namespace mash::kernels::detail {

void block4_scalar(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                   std::size_t c0, std::size_t c1, double* acc) {
  const std::size_t w = c1 - c0;
  std::fill(acc, acc + 4 * w, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = Q + i * cols + c0;
    const double x0 = xi4[i], x1 = xi4[n + i], x2 = xi4[2 * n + i], x3 = xi4[3 * n + i];
    for (std::size_t c = 0; c < w; ++c) {
      const double q = row[c];
      acc[c] += x0 * q;
      acc[w + c] += x1 * q;
      acc[2 * w + c] += x2 * q;
      acc[3 * w + c] += x3 * q;
    }
  }
}

}  // namespace mash::kernels::detail
