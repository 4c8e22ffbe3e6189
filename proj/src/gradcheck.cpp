#include "ksac/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ksac/autograd.hpp"
#include "ksac/errors.hpp"
#include "ksac/random.hpp"

namespace ksac {

std::string GradcheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << std::scientific << max_rel_error
     << " tolerance=" << tolerance << " checked=" << checked;
  if (worst_index >= 0) {
    os << " worst=" << worst_param << '[' << worst_index << "] analytic=" << worst_analytic
       << " numeric=" << worst_numeric;
  }
  return os.str();
}

GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn, const std::vector<GradcheckParam>& params,
                          const GradcheckOptions& options) {
  if constexpr (sizeof(Real) < sizeof(double)) {
    throw ContractError("gradcheck requires a 64-bit build");
  }
  for (GradcheckParam p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.clear_grad();
  }
  Tape::current().clear();
  backward(loss_fn());

  // (param index, element index) pairs to check.
  std::vector<std::pair<std::size_t, std::int64_t>> slots;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::int64_t j = 0; j < params[i].tensor.numel(); ++j) slots.emplace_back(i, j);
  }
  if (static_cast<std::int64_t>(slots.size()) > options.max_samples) {
    Rng rng(options.seed);
    // Partial Fisher-Yates: the first max_samples entries become the sample.
    for (std::int64_t i = 0; i < options.max_samples; ++i) {
      const auto j = rng.uniform_int(i, static_cast<std::int64_t>(slots.size()) - 1);
      std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(j)]);
    }
    slots.resize(static_cast<std::size_t>(options.max_samples));
  }

  GradcheckReport report;
  report.tolerance = options.tolerance;
  NoGradGuard no_grad;
  for (const auto& [pi, idx] : slots) {
    Tensor t = params[pi].tensor;
    auto data = t.mutable_data();
    const Real saved = data[static_cast<std::size_t>(idx)];
    data[static_cast<std::size_t>(idx)] = saved + static_cast<Real>(options.epsilon);
    const double plus = loss_fn().item();
    data[static_cast<std::size_t>(idx)] = saved - static_cast<Real>(options.epsilon);
    const double minus = loss_fn().item();
    data[static_cast<std::size_t>(idx)] = saved;

    const double numeric = (plus - minus) / (2.0 * options.epsilon);
    const double analytic = t.has_grad() ? static_cast<double>(t.grad()[static_cast<std::size_t>(idx)]) : 0.0;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.checked;
    if (report.worst_index < 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = params[pi].name;
      report.worst_index = idx;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace ksac
