#pragma once

#include <cstdint>

#include "ksac/tensor.hpp"

namespace ksac::detail {

// Row-major, accumulating (C += ...). Leading dimensions equal the logical
// column counts. Summation order is fixed, so results are reproducible.

/// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, const Real* b, Real* c);
/// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, const Real* b, Real* c);
/// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::int64_t m, std::int64_t n, std::int64_t k, const Real* a, const Real* b, Real* c);

}  // namespace ksac::detail
