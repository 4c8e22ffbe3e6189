#include "ksac/tensor_ops.hpp"

#include "ksac/autograd.hpp"
#include "ksac/errors.hpp"

namespace ksac {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

void accumulate(Tensor t, std::span<const Real> g, Real scale = 1) {
  if (!t.requires_grad()) return;
  auto dst = t.grad_buffer();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * g[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const bool track = detail::needs_grad({&a, &b});
  Tensor out = detail::make_output(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (track) {
    Tape::current().record({a, b}, out, [a, b](std::span<const Real> g) {
      accumulate(a, g);
      accumulate(b, g);
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const bool track = detail::needs_grad({&a, &b});
  Tensor out = detail::make_output(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (track) {
    Tape::current().record({a, b}, out, [a, b](std::span<const Real> g) mutable {
      // Read both operands before writing either grad; a and b may alias.
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

Tensor scalar_mul(const Tensor& a, Real s) {
  const bool track = detail::needs_grad({&a});
  Tensor out = detail::make_output(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
  if (track) {
    Tape::current().record({a}, out, [a, s](std::span<const Real> g) { accumulate(a, g, s); });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  const bool track = detail::needs_grad({&a});
  Tensor out = detail::make_output({1, 1, 1, 1}, track);
  Real total = 0;
  for (Real v : a.data()) total += v;
  out.mutable_data()[0] = total;
  if (track) {
    Tape::current().record({a}, out, [a](std::span<const Real> g) mutable {
      auto ga = a.grad_buffer();
      for (Real& v : ga) v += g[0];
    });
  }
  return out;
}

Tensor add_n(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("add_n: empty input list");
  for (const Tensor& p : parts) require_same_shape("add_n", parts.front(), p);
  const bool track = detail::needs_grad(parts);
  Tensor out = detail::make_output(parts.front().shape(), track);
  auto o = out.mutable_data();
  for (const Tensor& p : parts) {
    auto x = p.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += x[i];
  }
  if (track) {
    Tape::current().record(parts, out, [parts](std::span<const Real> g) {
      for (const Tensor& p : parts) accumulate(p, g);
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: empty input list");
  const Shape& first = parts.front().shape();
  std::int64_t channels = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: shape mismatch " + first.str() + " vs " + s.str());
    }
    channels += s.c;
  }
  const Shape out_shape{first.n, channels, first.h, first.w};
  const bool track = detail::needs_grad(parts);
  Tensor out = detail::make_output(out_shape, track);
  auto o = out.mutable_data();
  const std::int64_t plane = first.plane();
  for (std::int64_t n = 0; n < first.n; ++n) {
    std::int64_t c0 = 0;
    for (const Tensor& p : parts) {
      const std::int64_t block = p.shape().c * plane;
      auto src = p.data().subspan(static_cast<std::size_t>(n * block), static_cast<std::size_t>(block));
      std::copy(src.begin(), src.end(), o.begin() + (n * channels + c0) * plane);
      c0 += p.shape().c;
    }
  }
  if (track) {
    Tape::current().record(parts, out, [parts, channels, plane](std::span<const Real> g) {
      const std::int64_t batch = parts.front().shape().n;
      std::int64_t c0 = 0;
      for (Tensor p : parts) {
        const std::int64_t block = p.shape().c * plane;
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::int64_t n = 0; n < batch; ++n) {
            const Real* src = g.data() + (n * channels + c0) * plane;
            Real* dst = gp.data() + n * block;
            for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        c0 += p.shape().c;
      }
    });
  }
  return out;
}

Tensor flip_horizontal(const Tensor& a) {
  const Shape s = a.shape();
  const bool track = detail::needs_grad({&a});
  Tensor out = detail::make_output(s, track);
  auto o = out.mutable_data();
  auto x = a.data();
  const std::int64_t rows = s.n * s.c * s.h;
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < s.w; ++j) o[r * s.w + j] = x[r * s.w + (s.w - 1 - j)];
  }
  if (track) {
    Tape::current().record({a}, out, [a, rows](std::span<const Real> g) mutable {
      const std::int64_t w = a.shape().w;
      auto ga = a.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < w; ++j) ga[r * w + (w - 1 - j)] += g[r * w + j];
      }
    });
  }
  return out;
}

}  // namespace ksac
