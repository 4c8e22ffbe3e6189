#include "ksac/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gemm.hpp"
#include "ksac/autograd.hpp"
#include "ksac/errors.hpp"

namespace ksac {

// ---------------------------------------------------------------------------
// ConvSpec

std::int64_t ConvSpec::out_h(std::int64_t in_h) const {
  const std::int64_t out = padding == Padding::same ? (in_h + stride - 1) / stride
                                                    : (in_h - extent_h()) / stride + 1;
  if (in_h < 1 || out < 1 || (padding == Padding::valid && in_h < extent_h())) {
    throw ShapeError("conv2d: input height " + std::to_string(in_h) + " too small for extent " +
                     std::to_string(extent_h()));
  }
  return out;
}

std::int64_t ConvSpec::out_w(std::int64_t in_w) const {
  const std::int64_t out = padding == Padding::same ? (in_w + stride - 1) / stride
                                                    : (in_w - extent_w()) / stride + 1;
  if (in_w < 1 || out < 1 || (padding == Padding::valid && in_w < extent_w())) {
    throw ShapeError("conv2d: input width " + std::to_string(in_w) + " too small for extent " +
                     std::to_string(extent_w()));
  }
  return out;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ConfigError("conv2d: channel counts must be positive");
  if (kh < 1 || kw < 1) throw ConfigError("conv2d: kernel size must be positive");
  if (stride < 1) throw ConfigError("conv2d: stride must be positive");
  if (rate < 1) throw ConfigError("conv2d: atrous rate must be >= 1");
}

namespace {

struct ConvGeometry {
  std::int64_t channels, in_h, in_w, out_h, out_w;
  std::int64_t kh, kw, stride, rate, off_h, off_w;

  std::int64_t depth() const { return channels * kh * kw; }
  std::int64_t pixels() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && off_h == 0 && off_w == 0; }
};

ConvGeometry geometry(const ConvSpec& spec, const Shape& in) {
  ConvGeometry g{};
  g.channels = in.c;
  g.in_h = in.h;
  g.in_w = in.w;
  g.out_h = spec.out_h(in.h);
  g.out_w = spec.out_w(in.w);
  g.kh = spec.kh;
  g.kw = spec.kw;
  g.stride = spec.stride;
  g.rate = spec.rate;
  g.off_h = spec.padding == Padding::same ? 0 : (spec.kh / 2) * spec.rate;
  g.off_w = spec.padding == Padding::same ? 0 : (spec.kw / 2) * spec.rate;
  return g;
}

// col[(c*kh + u)*kw + v][i*out_w + j] = x[c][y][x] or 0 outside the image.
void im2col(const ConvGeometry& g, const Real* x, Real* col) {
  const std::int64_t pixels = g.pixels();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    const Real* plane = x + c * g.in_h * g.in_w;
    for (std::int64_t u = 0; u < g.kh; ++u) {
      const std::int64_t dy = (u - g.kh / 2) * g.rate + g.off_h;
      for (std::int64_t v = 0; v < g.kw; ++v) {
        const std::int64_t dx = (v - g.kw / 2) * g.rate + g.off_w;
        Real* row = col + ((c * g.kh + u) * g.kw + v) * pixels;
        for (std::int64_t i = 0; i < g.out_h; ++i) {
          const std::int64_t y = i * g.stride + dy;
          Real* dst = row + i * g.out_w;
          if (y < 0 || y >= g.in_h) {
            std::fill(dst, dst + g.out_w, Real(0));
            continue;
          }
          const Real* src = plane + y * g.in_w;
          for (std::int64_t j = 0; j < g.out_w; ++j) {
            const std::int64_t xx = j * g.stride + dx;
            dst[j] = (xx >= 0 && xx < g.in_w) ? src[xx] : Real(0);
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Real* col, Real* dx_out) {
  const std::int64_t pixels = g.pixels();
  for (std::int64_t c = 0; c < g.channels; ++c) {
    Real* plane = dx_out + c * g.in_h * g.in_w;
    for (std::int64_t u = 0; u < g.kh; ++u) {
      const std::int64_t dy = (u - g.kh / 2) * g.rate + g.off_h;
      for (std::int64_t v = 0; v < g.kw; ++v) {
        const std::int64_t dx = (v - g.kw / 2) * g.rate + g.off_w;
        const Real* row = col + ((c * g.kh + u) * g.kw + v) * pixels;
        for (std::int64_t i = 0; i < g.out_h; ++i) {
          const std::int64_t y = i * g.stride + dy;
          if (y < 0 || y >= g.in_h) continue;
          const Real* src = row + i * g.out_w;
          Real* dst = plane + y * g.in_w;
          for (std::int64_t j = 0; j < g.out_w; ++j) {
            const std::int64_t xx = j * g.stride + dx;
            if (xx >= 0 && xx < g.in_w) dst[xx] += src[j];
          }
        }
      }
    }
  }
}

void check_conv_operands(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
                         const ConvSpec& spec) {
  spec.validate();
  if (x.shape().c != spec.in_channels) {
    throw ShapeError("conv2d: input " + x.shape().str() + " has " + std::to_string(x.shape().c) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  if (kernel.shape() != spec.kernel_shape()) {
    throw ShapeError("conv2d: kernel " + kernel.shape().str() + " does not match spec " +
                     spec.kernel_shape().str());
  }
  if (bias && bias->shape() != Shape{1, spec.out_channels, 1, 1}) {
    throw ShapeError("conv2d: bias " + bias->shape().str() + " must be (1," +
                     std::to_string(spec.out_channels) + ",1,1)");
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias, const ConvSpec& spec) {
  check_conv_operands(x, kernel, bias, spec);
  const ConvGeometry g = geometry(spec, x.shape());
  const std::int64_t batch = x.shape().n;
  const std::int64_t co = spec.out_channels;
  const std::int64_t depth = g.depth();
  const std::int64_t pixels = g.pixels();
  const std::int64_t in_block = g.channels * g.in_h * g.in_w;

  const bool track = detail::needs_grad({&x, &kernel, bias ? &*bias : nullptr});
  Tensor out = detail::make_output({batch, co, g.out_h, g.out_w}, track);
  auto o = out.mutable_data();

  std::vector<Real> col(g.is_pointwise() ? 0 : static_cast<std::size_t>(depth * pixels));
  for (std::int64_t n = 0; n < batch; ++n) {
    const Real* xn = x.data().data() + n * in_block;
    const Real* cols = xn;
    if (!g.is_pointwise()) {
      im2col(g, xn, col.data());
      cols = col.data();
    }
    Real* on = o.data() + n * co * pixels;
    if (bias) {
      for (std::int64_t c = 0; c < co; ++c) std::fill(on + c * pixels, on + (c + 1) * pixels, bias->data()[c]);
    }
    detail::gemm_nn(co, pixels, depth, kernel.data().data(), cols, on);
  }

  if (track) {
    std::vector<Tensor> inputs{x, kernel};
    if (bias) inputs.push_back(*bias);
    Tape::current().record(std::move(inputs), out,
                           [x, kernel, bias, g, batch, co](std::span<const Real> grad) mutable {
      const std::int64_t depth = g.depth();
      const std::int64_t pixels = g.pixels();
      const std::int64_t in_block = g.channels * g.in_h * g.in_w;
      std::vector<Real> col(static_cast<std::size_t>(depth * pixels));
      Real* dk = kernel.requires_grad() ? kernel.grad_buffer().data() : nullptr;
      Real* dx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      for (std::int64_t n = 0; n < batch; ++n) {
        const Real* gn = grad.data() + n * co * pixels;
        if (dk != nullptr) {
          const Real* cols = x.data().data() + n * in_block;
          if (!g.is_pointwise()) {
            im2col(g, cols, col.data());
            cols = col.data();
          }
          detail::gemm_nt(co, depth, pixels, gn, cols, dk);
        }
        if (dx != nullptr) {
          if (g.is_pointwise()) {
            detail::gemm_tn(depth, pixels, co, kernel.data().data(), gn, dx + n * in_block);
          } else {
            std::fill(col.begin(), col.end(), Real(0));
            detail::gemm_tn(depth, pixels, co, kernel.data().data(), gn, col.data());
            col2im(g, col.data(), dx + n * in_block);
          }
        }
      }
      if (bias && bias->requires_grad()) {
        auto db = bias->grad_buffer();
        for (std::int64_t n = 0; n < batch; ++n) {
          for (std::int64_t c = 0; c < co; ++c) {
            const Real* gc = grad.data() + (n * co + c) * pixels;
            Real s = 0;
            for (std::int64_t p = 0; p < pixels; ++p) s += gc[p];
            db[c] += s;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization

BatchNormState BatchNormState::make(std::int64_t channels) {
  if (channels < 1) throw ConfigError("batch_norm: channel count must be positive");
  BatchNormState st;
  const Shape s{1, channels, 1, 1};
  st.gamma = Tensor(s, fill::Ones{});
  st.gamma.set_requires_grad(true);
  st.beta = Tensor(s, fill::Zeros{});
  st.beta.set_requires_grad(true);
  st.running_mean = Tensor(s, fill::Zeros{});
  st.running_var = Tensor(s, fill::Ones{});
  return st;
}

Tensor batch_norm(const Tensor& x, BatchNormState& st) { return batch_norm(x, st, st.mode); }

Tensor batch_norm(const Tensor& x, BatchNormState& st, Mode mode) {
  const Shape s = x.shape();
  if (s.c != st.channels()) {
    throw ShapeError("batch_norm: input " + s.str() + " vs " + std::to_string(st.channels()) + " channels");
  }
  const std::int64_t plane = s.plane();
  const std::int64_t count = s.n * plane;
  const Real eps = st.epsilon;

  // Per-channel statistics actually used for normalization.
  std::vector<Real> mean(static_cast<std::size_t>(s.c));
  std::vector<Real> inv_std(static_cast<std::size_t>(s.c));
  auto xd = x.data();

  if (mode == Mode::train) {
    if (count < 2) {
      throw DegenerateBatchError("batch_norm: train mode needs N*H*W >= 2 per channel, got " +
                                 std::to_string(count) + " for input " + s.str());
    }
    auto rm = st.running_mean.mutable_data();
    auto rv = st.running_var.mutable_data();
    for (std::int64_t c = 0; c < s.c; ++c) {
      Real sum = 0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const Real* p = xd.data() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const Real mu = sum / static_cast<Real>(count);
      Real sq = 0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const Real* p = xd.data() + (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const Real var = sq / static_cast<Real>(count);
      mean[c] = mu;
      inv_std[c] = Real(1) / std::sqrt(var + eps);
      rm[c] = st.momentum * rm[c] + (Real(1) - st.momentum) * mu;
      rv[c] = st.momentum * rv[c] + (Real(1) - st.momentum) * (sq / static_cast<Real>(count - 1));
    }
  } else {
    auto rm = st.running_mean.data();
    auto rv = st.running_var.data();
    for (std::int64_t c = 0; c < s.c; ++c) {
      mean[c] = rm[c];
      inv_std[c] = Real(1) / std::sqrt(rv[c] + eps);
    }
  }

  const bool track = detail::needs_grad({&x, &st.gamma, &st.beta});
  Tensor out = detail::make_output(s, track);
  auto o = out.mutable_data();
  auto gamma = st.gamma.data();
  auto beta = st.beta.data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
      if (mode == Mode::train) {
        for (std::int64_t i = 0; i < plane; ++i) {
          o[base + i] = gamma[c] * ((xd[base + i] - mean[c]) * inv_std[c]) + beta[c];
        }
      } else {
        const Real denom = std::sqrt(st.running_var.data()[c] + eps);
        for (std::int64_t i = 0; i < plane; ++i) o[base + i] = gamma[c] * (xd[base + i] - mean[c]) / denom + beta[c];
      }
    }
  }

  if (track) {
    Tensor gamma_t = st.gamma;
    Tensor beta_t = st.beta;
    Tape::current().record({x, gamma_t, beta_t}, out,
                           [x, gamma_t, beta_t, mean, inv_std, mode, s](std::span<const Real> g) mutable {
      const std::int64_t plane = s.plane();
      const Real m = static_cast<Real>(s.n * plane);
      auto xd = x.data();
      auto gamma = gamma_t.data();
      Real* dx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
      Real* dgamma = gamma_t.requires_grad() ? gamma_t.grad_buffer().data() : nullptr;
      Real* dbeta = beta_t.requires_grad() ? beta_t.grad_buffer().data() : nullptr;
      for (std::int64_t c = 0; c < s.c; ++c) {
        Real sum_g = 0;
        Real sum_gx = 0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
          for (std::int64_t i = 0; i < plane; ++i) {
            const Real xhat = (xd[base + i] - mean[c]) * inv_std[c];
            sum_g += g[base + i];
            sum_gx += g[base + i] * xhat;
          }
        }
        if (dgamma) dgamma[c] += sum_gx;
        if (dbeta) dbeta[c] += sum_g;
        if (!dx) continue;
        const Real scale = gamma[c] * inv_std[c];
        for (std::int64_t n = 0; n < s.n; ++n) {
          const std::size_t base = static_cast<std::size_t>((n * s.c + c) * plane);
          for (std::int64_t i = 0; i < plane; ++i) {
            if (mode == Mode::train) {
              const Real xhat = (xd[base + i] - mean[c]) * inv_std[c];
              dx[base + i] += scale * (g[base + i] - sum_g / m - xhat * sum_gx / m);
            } else {
              dx[base + i] += scale * g[base + i];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise, pooling, resampling

Tensor relu(const Tensor& x) {
  const bool track = detail::needs_grad({&x});
  Tensor out = detail::make_output(x.shape(), track);
  auto o = out.mutable_data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > 0 ? xd[i] : Real(0);
  if (track) {
    Tape::current().record({x}, out, [x](std::span<const Real> g) mutable {
      auto xd = x.data();
      auto dx = x.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (xd[i] > 0) dx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape s = x.shape();
  const std::int64_t plane = s.plane();
  if (plane < 1) throw ShapeError("global_avg_pool: empty spatial extent " + s.str());
  const bool track = detail::needs_grad({&x});
  Tensor out = detail::make_output({s.n, s.c, 1, 1}, track);
  auto o = out.mutable_data();
  auto xd = x.data();
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    Real sum = 0;
    for (std::int64_t i = 0; i < plane; ++i) sum += xd[nc * plane + i];
    o[nc] = sum / static_cast<Real>(plane);
  }
  if (track) {
    Tape::current().record({x}, out, [x, plane](std::span<const Real> g) mutable {
      auto dx = x.grad_buffer();
      const Real inv = Real(1) / static_cast<Real>(plane);
      for (std::size_t nc = 0; nc < g.size(); ++nc) {
        for (std::int64_t i = 0; i < plane; ++i) dx[nc * plane + i] += g[nc] * inv;
      }
    });
  }
  return out;
}

namespace {

struct Tap {
  std::int64_t i0, i1;
  Real w0, w1;
};

// Half-pixel-center source taps for each destination index.
std::vector<Tap> linear_taps(std::int64_t in, std::int64_t out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    std::int64_t i0 = static_cast<std::int64_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::int64_t i1 = i0 < in - 1 ? i0 + 1 : i0;
    const Real frac = static_cast<Real>(src - static_cast<double>(i0));
    taps[static_cast<std::size_t>(d)] = {i0, i1, Real(1) - frac, frac};
  }
  return taps;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("bilinear_resize: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " must be >= 1");
  }
  const Shape s = x.shape();
  if (s.h < 1 || s.w < 1) throw ShapeError("bilinear_resize: empty input " + s.str());
  const auto ty = linear_taps(s.h, out_h);
  const auto tx = linear_taps(s.w, out_w);
  const bool track = detail::needs_grad({&x});
  Tensor out = detail::make_output({s.n, s.c, out_h, out_w}, track);
  auto o = out.mutable_data();
  auto xd = x.data();
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const Real* src = xd.data() + nc * s.plane();
    Real* dst = o.data() + nc * out_h * out_w;
    for (std::int64_t i = 0; i < out_h; ++i) {
      const Tap& a = ty[static_cast<std::size_t>(i)];
      const Real* r0 = src + a.i0 * s.w;
      const Real* r1 = src + a.i1 * s.w;
      for (std::int64_t j = 0; j < out_w; ++j) {
        const Tap& b = tx[static_cast<std::size_t>(j)];
        // Lerp form keeps equal taps exact (a 1x1 source broadcasts bit-identically).
        const Real top = r0[b.i0] + b.w1 * (r0[b.i1] - r0[b.i0]);
        const Real bottom = r1[b.i0] + b.w1 * (r1[b.i1] - r1[b.i0]);
        dst[i * out_w + j] = top + a.w1 * (bottom - top);
      }
    }
  }
  if (track) {
    Tape::current().record({x}, out, [x, ty, tx, out_h, out_w](std::span<const Real> g) mutable {
      const Shape s = x.shape();
      auto dx = x.grad_buffer();
      for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        Real* dsrc = dx.data() + nc * s.plane();
        const Real* gd = g.data() + nc * out_h * out_w;
        for (std::int64_t i = 0; i < out_h; ++i) {
          const Tap& a = ty[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j < out_w; ++j) {
            const Tap& b = tx[static_cast<std::size_t>(j)];
            const Real gv = gd[i * out_w + j];
            dsrc[a.i0 * s.w + b.i0] += gv * a.w0 * b.w0;
            dsrc[a.i0 * s.w + b.i1] += gv * a.w0 * b.w1;
            dsrc[a.i1 * s.w + b.i0] += gv * a.w1 * b.w0;
            dsrc[a.i1 * s.w + b.i1] += gv * a.w1 * b.w1;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

XentResult softmax_xent(const Tensor& logits, const LabelMap& labels, std::int32_t ignore_label) {
  const Shape s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw ShapeError("softmax_xent: logits " + s.str() + " vs labels (" + std::to_string(labels.n) + "," +
                     std::to_string(labels.h) + "," + std::to_string(labels.w) + ")");
  }
  const std::int64_t k = s.c;
  const std::int64_t plane = s.plane();
  std::int64_t counted = 0;
  for (std::int32_t l : labels.values) {
    if (l == ignore_label) continue;
    if (l < 0 || l >= k) {
      throw ContractError("softmax_xent: label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");
    }
    ++counted;
  }

  // Per-pixel softmax probabilities are kept for the backward pass.
  std::vector<Real> prob(static_cast<std::size_t>(logits.numel()));
  auto xd = logits.data();
  double total = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t p = 0; p < plane; ++p) {
      const std::int32_t label = labels.values[static_cast<std::size_t>(n * plane + p)];
      Real mx = xd[static_cast<std::size_t>(n * k * plane + p)];
      for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, xd[static_cast<std::size_t>((n * k + c) * plane + p)]);
      Real denom = 0;
      for (std::int64_t c = 0; c < k; ++c) {
        const std::size_t idx = static_cast<std::size_t>((n * k + c) * plane + p);
        prob[idx] = std::exp(xd[idx] - mx);
        denom += prob[idx];
      }
      for (std::int64_t c = 0; c < k; ++c) prob[static_cast<std::size_t>((n * k + c) * plane + p)] /= denom;
      if (label == ignore_label) continue;
      const Real z = xd[static_cast<std::size_t>((n * k + label) * plane + p)];
      total += static_cast<double>(std::log(denom) + mx - z);
    }
  }

  XentResult result;
  result.counted_pixels = counted;
  result.all_ignored = counted == 0;
  const bool track = detail::needs_grad({&logits});
  result.loss = detail::make_output({1, 1, 1, 1}, track);
  result.loss.mutable_data()[0] = counted == 0 ? Real(0) : static_cast<Real>(total / static_cast<double>(counted));

  if (track) {
    Tape::current().record({logits}, result.loss,
                           [logits, labels, prob = std::move(prob), counted, ignore_label](std::span<const Real> g) mutable {
      auto dx = logits.grad_buffer();
      if (counted == 0) return;
      const Shape s = logits.shape();
      const std::int64_t plane = s.plane();
      const Real scale = g[0] / static_cast<Real>(counted);
      for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t p = 0; p < plane; ++p) {
          const std::int32_t label = labels.values[static_cast<std::size_t>(n * plane + p)];
          if (label == ignore_label) continue;
          for (std::int64_t c = 0; c < s.c; ++c) {
            const std::size_t idx = static_cast<std::size_t>((n * s.c + c) * plane + p);
            dx[idx] += scale * (prob[idx] - (c == label ? Real(1) : Real(0)));
          }
        }
      }
    });
  }
  return result;
}

}  // namespace ksac
