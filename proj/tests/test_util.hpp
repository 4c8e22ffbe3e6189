#pragma once

// Reference implementations used as independent oracles by the tests.
// They follow the defining formulas literally and share no code with the
// optimized library kernels.

#include <cmath>
#include <optional>
#include <vector>

#include "ksac/model.hpp"
#include "ksac/nn_ops.hpp"
#include "ksac/tensor_ops.hpp"
#include "ksac/random.hpp"
#include "ksac/tensor.hpp"

namespace ksac::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return Tensor(s, fill::Uniform{static_cast<Real>(lo), static_cast<Real>(hi), seed});
}

inline Tensor param(Shape s, std::uint64_t seed) {
  Tensor t = random_tensor(s, seed);
  t.set_requires_grad(true);
  return t;
}

/// Six nested loops over the textbook atrous convolution definition.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& k, const std::optional<Tensor>& bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const std::int64_t oh = spec.out_h(xs.h);
  const std::int64_t ow = spec.out_w(xs.w);
  const std::int64_t off_h = spec.padding == Padding::same ? 0 : (spec.kh / 2) * spec.rate;
  const std::int64_t off_w = spec.padding == Padding::same ? 0 : (spec.kw / 2) * spec.rate;
  std::vector<Real> out(static_cast<std::size_t>(xs.n * spec.out_channels * oh * ow));
  std::size_t idx = 0;
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t o = 0; o < spec.out_channels; ++o) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          Real acc = bias ? bias->at(0, o, 0, 0) : Real(0);
          for (std::int64_t c = 0; c < xs.c; ++c) {
            for (std::int64_t u = 0; u < spec.kh; ++u) {
              for (std::int64_t v = 0; v < spec.kw; ++v) {
                const std::int64_t y = i * spec.stride + (u - spec.kh / 2) * spec.rate + off_h;
                const std::int64_t xx = j * spec.stride + (v - spec.kw / 2) * spec.rate + off_w;
                if (y < 0 || y >= xs.h || xx < 0 || xx >= xs.w) continue;
                acc += x.at(n, c, y, xx) * k.at(o, c, u, v);
              }
            }
          }
          out[idx++] = acc;
        }
      }
    }
  }
  return Tensor({xs.n, spec.out_channels, oh, ow}, std::move(out));
}

/// Inserts rate-1 zeros between kernel taps, giving extent k + (k-1)(rate-1).
inline Tensor zero_inflate(const Tensor& k, std::int64_t rate) {
  const Shape s = k.shape();
  const std::int64_t eh = s.h + (s.h - 1) * (rate - 1);
  const std::int64_t ew = s.w + (s.w - 1) * (rate - 1);
  Tensor out = Tensor::zeros({s.n, s.c, eh, ew});
  auto d = out.mutable_data();
  for (std::int64_t o = 0; o < s.n; ++o)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t u = 0; u < s.h; ++u)
        for (std::int64_t v = 0; v < s.w; ++v)
          d[static_cast<std::size_t>(((o * s.c + c) * eh + u * rate) * ew + v * rate)] = k.at(o, c, u, v);
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(double(a.data()[i] - b.data()[i])));
  return m;
}

/// sum(out * R) for a fixed random R, so every output element carries a
/// distinct O(1) weight in the gradient.
inline Tensor weighted_sum_loss(const Tensor& out, std::uint64_t seed) {
  return sum_all(mul(out, random_tensor(out.shape(), seed)));
}

/// Averages every kernel with its left-right mirror so the model commutes
/// with horizontal flips on odd-sized inputs.
inline void symmetrize_kernels(Model& model) {
  for (ParamRef& p : model.parameters()) {
    const Shape s = p.tensor.shape();
    if (!p.trainable || s.w < 2 || s.h != s.w) continue;
    auto d = p.tensor.mutable_data();
    for (std::int64_t row = 0; row < s.n * s.c * s.h; ++row) {
      Real* r = d.data() + row * s.w;
      for (std::int64_t v = 0; v < s.w / 2; ++v) {
        const Real mean = (r[v] + r[s.w - 1 - v]) / 2;
        r[v] = r[s.w - 1 - v] = mean;
      }
    }
  }
}

}  // namespace ksac::testing
