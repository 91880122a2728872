#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>
#include <string_view>
#include <vector>

#include "mash/error.hpp"
#include "mash/kernels.hpp"

namespace mash::kernels {

const char* to_string(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
  }
  return "scalar";
}

bool isa_supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa best_isa() noexcept {
  if (isa_supported(Isa::avx2)) return Isa::avx2;
  if (isa_supported(Isa::neon)) return Isa::neon;
  return Isa::scalar;
}

namespace {

Isa initial_isa() noexcept {
  const char* env = std::getenv("MASH_FORCE_SCALAR");
  if (env && *env && std::string_view(env) != "0") return Isa::scalar;
  return best_isa();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

detail::Block4 block_for(Isa isa) {
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::avx2: return detail::block4_avx2;
#endif
#if defined(__aarch64__)
    case Isa::neon: return detail::block4_neon;
#endif
    default: return detail::block4_scalar;
  }
}

}  // namespace

Isa active_isa() noexcept { return current().load(); }

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw Error(ErrorCode::InvalidArgument,
                std::string("instruction set ") + to_string(isa) + " is not available");
  }
  current().store(isa);
}

namespace detail {

void multiplier_sup_with(Isa isa, const double* xi, std::size_t B, std::size_t n, const double* Q,
                         std::size_t T, std::size_t p, double* out_l, double* out_all) {
  if (!isa_supported(isa)) throw Error(ErrorCode::InvalidArgument, "unsupported instruction set");
  const Block4 block = block_for(isa);
  const std::size_t cols = T * p;
  // tiles hold whole time points so the per-time sum over l stays inside one tile
  const std::size_t tile = p * std::max<std::size_t>(1, 512 / std::max<std::size_t>(p, 1));
  std::vector<double> xi4(4 * n), acc(4 * tile);
  std::fill(out_l, out_l + B * p, 0.0);
  std::fill(out_all, out_all + B, 0.0);
  for (std::size_t b0 = 0; b0 < B; b0 += 4) {
    const std::size_t nd = std::min<std::size_t>(4, B - b0);
    std::fill(xi4.begin(), xi4.end(), 0.0);
    std::copy(xi + b0 * n, xi + (b0 + nd) * n, xi4.begin());
    for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
      const std::size_t c1 = std::min(cols, c0 + tile), w = c1 - c0;
      block(xi4.data(), n, Q, cols, c0, c1, acc.data());
      for (std::size_t k = 0; k < nd; ++k) {
        const double* a = acc.data() + k * w;
        double* ol = out_l + (b0 + k) * p;
        double& oa = out_all[b0 + k];
        for (std::size_t c = 0; c < w; c += p) {
          double sum = 0.0;
          for (std::size_t l = 0; l < p; ++l) {
            const double v = std::abs(a[c + l]);
            ol[l] = std::max(ol[l], v);
            sum += v;
          }
          oa = std::max(oa, sum);
        }
      }
    }
  }
}

}  // namespace detail

void multiplier_sup(const double* xi, std::size_t B, std::size_t n, const double* Q, std::size_t T,
                    std::size_t p, double* out_l, double* out_all) {
  detail::multiplier_sup_with(active_isa(), xi, B, n, Q, T, p, out_l, out_all);
}

}  // namespace mash::kernels
