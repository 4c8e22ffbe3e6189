#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace ksac {

#ifdef KSAC_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

/// Extent of a rank-4 (N, C, H, W) tensor.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  /// Element count; throws AllocationError if the product overflows.
  std::int64_t numel() const;
  std::int64_t plane() const { return h * w; }
  std::array<std::int64_t, 4> dims() const { return {n, c, h, w}; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

namespace fill {
struct Zeros {};
struct Ones {};
struct Constant {
  Real value;
};
struct Uniform {
  Real lo;
  Real hi;
  std::uint64_t seed;
};
/// Normal(0, sqrt(2 / fan_in)) with fan_in = C * H * W of the tensor shape.
struct HeNormal {
  std::uint64_t seed;
};
}  // namespace fill

using Fill = std::variant<fill::Zeros, fill::Ones, fill::Constant, fill::Uniform, fill::HeNormal>;

namespace detail {
struct TensorImpl;
}

/// Dense row-major NCHW array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets a recorded operation refer back to its inputs. Use clone() or
/// detach() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Fill fill);
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor zeros(Shape s) { return Tensor(s, fill::Zeros{}); }
  static Tensor scalar(Real v) { return Tensor({1, 1, 1, 1}, fill::Constant{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;

  std::span<const Real> data() const;
  /// In-place access for initializers and optimizers. Not recorded.
  std::span<Real> mutable_data();

  Real at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
  Real item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const Real> grad() const;
  /// Lazily allocates a zero gradient buffer and returns it for accumulation.
  std::span<Real> grad_buffer() const;
  void zero_grad();
  void clear_grad();

  /// Independent copy of the values; no gradient, not attached to any tape.
  Tensor detach() const;
  /// Same as detach() but keeps requires_grad.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Tape bookkeeping.
  std::uint64_t tape_epoch() const;
  std::int64_t tape_index() const;
  void set_producer(std::uint64_t epoch, std::int64_t index);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Factory mirroring the fill enumeration.
Tensor tensor_new(Shape shape, Fill fill);

}  // namespace ksac
