#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <vector>

#include "ksac/tensor.hpp"

namespace ksac {

/// Receives the output gradient and accumulates into the inputs' grad buffers.
using BackwardFn = std::function<void(std::span<const Real> grad_out)>;

/// Ordered record of differentiable operations for the calling thread.
///
/// Operations append in execution order, so records are topologically
/// sorted; backward() replays them strictly in reverse. One tape exists per
/// thread and graphs must not be shared across threads while in flight.
class Tape {
 public:
  static Tape& current();

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn);
  std::size_t size() const { return records_.size(); }
  std::uint64_t epoch() const { return epoch_; }

  /// Drops every record and invalidates tensors produced on this tape.
  void clear();

  void backward(const Tensor& loss);

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };

  std::vector<Record> records_;
  std::uint64_t epoch_ = 0;
};

/// Populates grad buffers of every requires_grad tensor reachable from the
/// scalar `loss`, then clears the current tape. Gradients accumulate.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

/// True when an op over these inputs must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(const std::vector<Tensor>& inputs);

/// Allocates an output tensor, marks it differentiable when `track` is set.
Tensor make_output(Shape shape, bool track);

}  // namespace detail

}  // namespace ksac
