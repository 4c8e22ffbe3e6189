#include "ksac/autograd.hpp"

#include <atomic>

#include "ksac/errors.hpp"

namespace ksac {

namespace {

std::uint64_t next_epoch() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

thread_local bool g_grad_enabled = true;

}  // namespace

Tape& Tape::current() {
  thread_local Tape tape;
  if (tape.epoch_ == 0) tape.epoch_ = next_epoch();
  return tape;
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
  output.set_producer(epoch_, static_cast<std::int64_t>(records_.size()));
  records_.push_back(Record{std::move(inputs), std::move(output), std::move(fn)});
}

void Tape::clear() {
  records_.clear();
  epoch_ = next_epoch();
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.shape() != Shape{1, 1, 1, 1}) {
    throw ContractError("backward requires a scalar (1,1,1,1) loss, got " +
                        (loss.defined() ? loss.shape().str() : std::string("undefined")));
  }
  const std::int64_t last = loss.tape_index();
  if (loss.tape_epoch() != epoch_ || last < 0 || last >= static_cast<std::int64_t>(records_.size()) ||
      !records_[static_cast<std::size_t>(last)].output.same_storage(loss)) {
    throw ContractError("backward: loss was not produced on the current tape");
  }

  Tensor root = loss;
  root.grad_buffer()[0] += Real(1);
  for (std::int64_t i = last; i >= 0; --i) {
    Record& rec = records_[static_cast<std::size_t>(i)];
    if (!rec.output.has_grad()) continue;
    rec.fn(rec.output.grad());
  }
  clear();
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool needs_grad(const std::vector<Tensor>& inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, bool track) {
  Tensor out = Tensor::zeros(shape);
  if (track) out.set_requires_grad(true);
  return out;
}

}  // namespace detail

}  // namespace ksac
