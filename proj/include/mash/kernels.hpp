#pragma once

#include <cstddef>

namespace mash::kernels {

enum class Isa { scalar, avx2, neon };

const char* to_string(Isa isa) noexcept;

// Best instruction set supported by this build and CPU.
Isa best_isa() noexcept;
// Instruction set used by multiplier_sup. Starts at best_isa() unless MASH_FORCE_SCALAR is set.
Isa active_isa() noexcept;
bool isa_supported(Isa isa) noexcept;
// Throws InvalidArgument when the instruction set is unavailable.
void set_isa(Isa isa);

// Multiplier suprema. xi is B x n row-major, Q is n x (T*p) row-major with column t*p + l.
// For draw b, W_b = sum_i xi(b, i) Q(i, .); writes
//   out_l(b, l) = max_t |W_b(t, l)|        (B x p row-major)
//   out_all(b)  = max_t sum_l |W_b(t, l)|
void multiplier_sup(const double* xi, std::size_t B, std::size_t n, const double* Q, std::size_t T,
                    std::size_t p, double* out_l, double* out_all);

namespace detail {

// acc(k, c - c0) = sum_i xi4(k, i) Q(i, c) for four draws and columns [c0, c1).
using Block4 = void (*)(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                        std::size_t c0, std::size_t c1, double* acc);

void block4_scalar(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                   std::size_t c0, std::size_t c1, double* acc);
#if defined(__x86_64__) || defined(_M_X64)
void block4_avx2(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                 std::size_t c0, std::size_t c1, double* acc);
#endif
#if defined(__aarch64__)
void block4_neon(const double* xi4, std::size_t n, const double* Q, std::size_t cols,
                 std::size_t c0, std::size_t c1, double* acc);
#endif

// Runs the driver with an explicit instruction set (for equivalence tests).
void multiplier_sup_with(Isa isa, const double* xi, std::size_t B, std::size_t n, const double* Q,
                         std::size_t T, std::size_t p, double* out_l, double* out_all);

}  // namespace detail
}  // namespace mash::kernels
