#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ksac/tensor.hpp"

namespace ksac {

struct GradcheckParam {
  std::string name;
  Tensor tensor;
};

struct GradcheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  /// Scalars checked; when the parameters hold more, a seeded subsample is used.
  std::int64_t max_samples = 200;
  std::uint64_t seed = 0;
};

struct GradcheckReport {
  bool passed = true;
  double tolerance = 0;
  double max_rel_error = 0;
  std::int64_t checked = 0;
  /// Location of the largest relative error.
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0;
  double worst_numeric = 0;

  std::string summary() const;
};

/// Compares the tape gradient of `loss_fn` (a scalar) against central
/// differences. Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn, const std::vector<GradcheckParam>& params,
                          const GradcheckOptions& options = {});

}  // namespace ksac
