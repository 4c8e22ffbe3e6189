#pragma once

#include <vector>

#include "ksac/tensor.hpp"

namespace ksac {

// Differentiable elementwise and structural operations. Binary ops require
// identical shapes; there is no broadcasting.

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, Real s);
/// Scalar (1,1,1,1) sum of every element.
Tensor sum_all(const Tensor& a);
/// Concatenates along C; all parts must share N, H and W.
Tensor concat_channels(const std::vector<Tensor>& parts);
/// Sum of a non-empty list of same-shape tensors.
Tensor add_n(const std::vector<Tensor>& parts);
/// Mirrors along W.
Tensor flip_horizontal(const Tensor& a);

}  // namespace ksac
