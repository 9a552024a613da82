#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "sfad/error.hpp"
#include "sfad/ops.hpp"
#include "sfad/tensor.hpp"

namespace sfad {

struct GradCheckOptions {
  double step = 1e-6;
  /// Lower bound on the denominator of the relative error, as a fraction of
  /// max(1, |loss|). Entries whose true gradient is ~0 are then judged on
  /// absolute error, which is all central differences can resolve there.
  double denominator_floor = 1e-3;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of the scalar `loss()` against central finite
/// differences (f(x+h) - f(x-h)) / 2h for every entry of every parameter.
/// Runs at 64-bit only; finite differences carry no signal at 32-bit.
template <typename LossFn>
GradCheckReport grad_check(LossFn&& loss, std::vector<NamedTensor<double>>& params, GradCheckOptions options = {}) {
  double floor = options.denominator_floor;
  for (auto& p : params) {
    p.tensor.zero_grad();
    p.tensor.set_requires_grad(true);
  }
  {
    Tape<double> tape;
    Tensor<double> value;
    {
      TapeScope<double> scope(tape);
      value = loss();
    }
    if (value.numel() != 1) {
      throw UsageError("grad_check: loss must be scalar, got shape " + to_string(value.shape()));
    }
    tape.backward(value);
    floor = options.denominator_floor * std::max(1.0, std::abs(value.item()));
  }

  GradCheckReport report;
  NoGradScope<double> no_grad;
  const double h = options.step;
  for (auto& p : params) {
    auto values = p.tensor.data();
    auto grad = std::as_const(p.tensor).grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(grad[i], numeric, floor);
      ++report.checked;
      if (err > report.max_rel_error || report.worst_param.empty()) {
        report.max_rel_error = err;
        report.worst_param = p.name;
        report.worst_index = i;
        report.worst_analytic = grad[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace sfad
