#include "ksac/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ksac/errors.hpp"
#include "ksac/random.hpp"

namespace ksac {

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::uint64_t epoch = 0;
  std::int64_t index = -1;
};
}  // namespace detail

std::int64_t Shape::numel() const {
  std::int64_t total = 1;
  for (std::int64_t d : dims()) {
    if (d < 0) throw ShapeError("negative dimension in shape " + str());
    if (__builtin_mul_overflow(total, d, &total)) {
      throw AllocationError("element count overflows for shape " + str());
    }
  }
  return total;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

namespace {

std::vector<Real> allocate(const Shape& shape) {
  const std::int64_t count = shape.numel();
  std::int64_t bytes = 0;
  if (__builtin_mul_overflow(count, static_cast<std::int64_t>(sizeof(Real)), &bytes)) {
    throw AllocationError("byte size overflows for shape " + shape.str());
  }
  try {
    return std::vector<Real>(static_cast<std::size_t>(count));
  } catch (const std::bad_alloc&) {
    throw AllocationError("cannot allocate tensor of shape " + shape.str());
  } catch (const std::length_error&) {
    throw AllocationError("cannot allocate tensor of shape " + shape.str());
  }
}

struct FillVisitor {
  const Shape& shape;
  std::vector<Real>& values;

  void operator()(fill::Zeros) const {}
  void operator()(fill::Ones) const { std::fill(values.begin(), values.end(), Real(1)); }
  void operator()(fill::Constant f) const { std::fill(values.begin(), values.end(), f.value); }
  void operator()(fill::Uniform f) const {
    Rng rng(f.seed);
    for (Real& v : values) v = static_cast<Real>(rng.uniform(f.lo, f.hi));
  }
  void operator()(fill::HeNormal f) const {
    const double fan_in = static_cast<double>(std::max<std::int64_t>(1, shape.c * shape.h * shape.w));
    const double stddev = std::sqrt(2.0 / fan_in);
    Rng rng(f.seed);
    for (Real& v : values) v = static_cast<Real>(stddev * rng.normal());
  }
};

}  // namespace

Tensor::Tensor(Shape shape, Fill f) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->shape = shape;
  impl_->data = allocate(shape);
  std::visit(FillVisitor{shape, impl_->data}, f);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape.str());
  }
  impl_->shape = shape;
  impl_->data = std::move(values);
}

Tensor tensor_new(Shape shape, Fill f) { return Tensor(shape, f); }

const Shape& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
std::span<const Real> Tensor::data() const { return impl_->data; }
std::span<Real> Tensor::mutable_data() { return impl_->data; }

Real Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = impl_->shape;
  return impl_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return impl_->grad; }

std::span<Real> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Real(0));
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }

Tensor Tensor::clone() const {
  Tensor copy = detach();
  copy.set_requires_grad(requires_grad());
  return copy;
}

std::uint64_t Tensor::tape_epoch() const { return impl_->epoch; }
std::int64_t Tensor::tape_index() const { return impl_->index; }

void Tensor::set_producer(std::uint64_t epoch, std::int64_t index) {
  impl_->epoch = epoch;
  impl_->index = index;
}

}  // namespace ksac
