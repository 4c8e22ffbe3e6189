#include "gemm.hpp"

#include <algorithm>
#include <vector>

namespace ksac::detail {

namespace {

constexpr std::int64_t kColBlock = 256;
constexpr std::int64_t kDepthBlock = 128;

// Four output rows share each load of a B row segment.
void kernel_rows4(std::int64_t n0, std::int64_t n1, std::int64_t k0, std::int64_t k1, std::int64_t n,
                  std::int64_t k, const Real* a, const Real* b, Real* c) {
  Real* c0 = c;
  Real* c1 = c + n;
  Real* c2 = c + 2 * n;
  Real* c3 = c + 3 * n;
  for (std::int64_t p = k0; p < k1; ++p) {
    const Real a0 = a[p];
    const Real a1 = a[k + p];
    const Real a2 = a[2 * k + p];
    const Real a3 = a[3 * k + p];
    const Real* brow = b + p * n;
    for (std::int64_t j = n0; j < n1; ++j) {
      const Real bv = brow[j];
      c0[j] += a0 * bv;
      c1[j] += a1 * bv;
      c2[j] += a2 * bv;
      c3[j] += a3 * bv;
    }
  }
}

void kernel_row1(std::int64_t n0, std::int64_t n1, std::int64_t k0, std::int64_t k1, std::int64_t n,
                 const Real* a, const Real* b, Real* c) {
  for (std::int64_t p = k0; p < k1; ++p) {
    const Real av = a[p];
    const Real* brow = b + p * n;
    for (std::int64_t j = n0; j < n1; ++j) c[j] += av * brow[j];
  }
}

}  // namespace

void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, const Real* b, Real* c) {
  for (std::int64_t k0 = 0; k0 < k; k0 += kDepthBlock) {
    const std::int64_t k1 = std::min(k, k0 + kDepthBlock);
    for (std::int64_t n0 = 0; n0 < n; n0 += kColBlock) {
      const std::int64_t n1 = std::min(n, n0 + kColBlock);
      std::int64_t i = 0;
      for (; i + 4 <= m; i += 4) kernel_rows4(n0, n1, k0, k1, n, k, a + i * k, b, c + i * n);
      for (; i < m; ++i) kernel_row1(n0, n1, k0, k1, n, a + i * k, b, c + i * n);
    }
  }
}

void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, const Real* b, Real* c) {
  // Transpose B once so the inner loop runs along contiguous memory.
  std::vector<Real> bt(static_cast<std::size_t>(n * k));
  for (std::int64_t j = 0; j < n; ++j) {
    for (std::int64_t p = 0; p < k; ++p) bt[static_cast<std::size_t>(p * n + j)] = b[j * k + p];
  }
  gemm_nn(m, n, k, a, bt.data(), c);
}

void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, const Real* b, Real* c) {
  std::vector<Real> at(static_cast<std::size_t>(m * k));
  for (std::int64_t p = 0; p < k; ++p) {
    for (std::int64_t i = 0; i < m; ++i) at[static_cast<std::size_t>(i * k + p)] = a[p * m + i];
  }
  gemm_nn(m, n, k, at.data(), b, c);
}

}  // namespace ksac::detail
