#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ksac/tensor.hpp"

namespace ksac {

enum class Padding { same, valid };
enum class Mode { train, eval };

/// Geometry of a 2-D (optionally atrous) convolution.
struct ConvSpec {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kh = 3;
  std::int64_t kw = 3;
  std::int64_t stride = 1;
  /// Atrous (dilation) rate: spacing between kernel taps.
  std::int64_t rate = 1;
  Padding padding = Padding::same;

  /// k + (k - 1)(rate - 1)
  std::int64_t extent_h() const { return kh + (kh - 1) * (rate - 1); }
  std::int64_t extent_w() const { return kw + (kw - 1) * (rate - 1); }

  /// Output extent for an input extent; throws ShapeError when it would be < 1.
  std::int64_t out_h(std::int64_t in_h) const;
  std::int64_t out_w(std::int64_t in_w) const;

  Shape kernel_shape() const { return {out_channels, in_channels, kh, kw}; }
  void validate() const;
};

/// Per-channel batch normalization parameters and running statistics.
///
/// gamma and beta are trainable (1,C,1,1) tensors; running_mean and
/// running_var are buffers of the same shape, updated in train mode as
/// running <- momentum * running + (1 - momentum) * batch.
struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  Real momentum = Real(0.9);
  Real epsilon = Real(1e-5);
  Mode mode = Mode::train;

  static BatchNormState make(std::int64_t channels);
  std::int64_t channels() const { return gamma.shape().c; }
};

/// Integer label map laid out as (N, H, W).
struct LabelMap {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), values(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int32_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
    return values[static_cast<std::size_t>((b * h + y) * w + x)];
  }
  std::int32_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>((b * h + y) * w + x)];
  }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline constexpr std::int32_t kDefaultIgnoreLabel = 255;

/// Atrous 2-D convolution with optional per-output-channel bias (1,C_out,1,1).
///
/// out(n,o,i,j) = bias(o) + sum_{c,u,v} x(n, c, i*s + (u - kh/2)*rate + off,
///                                          j*s + (v - kw/2)*rate + off) * k(o,c,u,v)
/// with off = 0 and zero fill for `same`, off = (k/2)*rate for `valid`.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias, const ConvSpec& spec);

/// Uses st.mode.
Tensor batch_norm(const Tensor& x, BatchNormState& st);
Tensor batch_norm(const Tensor& x, BatchNormState& st, Mode mode);

Tensor relu(const Tensor& x);
/// Spatial mean, (N,C,H,W) -> (N,C,1,1).
Tensor global_avg_pool(const Tensor& x);
/// Linear interpolation with half-pixel centers (align_corners = false).
/// Works for both up- and down-scaling.
Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w);
inline Tensor bilinear_upsample(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  return bilinear_resize(x, out_h, out_w);
}

struct XentResult {
  Tensor loss;
  std::int64_t counted_pixels = 0;
  /// Every pixel carried ignore_label; loss is defined as 0 with zero gradient.
  bool all_ignored = false;
};

/// Mean over non-ignored pixels of -log softmax(logits)[label].
XentResult softmax_xent(const Tensor& logits, const LabelMap& labels,
                        std::int32_t ignore_label = kDefaultIgnoreLabel);

}  // namespace ksac
