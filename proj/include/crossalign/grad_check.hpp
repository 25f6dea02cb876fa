#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "crossalign/params.hpp"

namespace crossalign::nn {

struct GradCheckEntry {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t nan_count = 0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool passed() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return !entries.empty();
  }
};

/// Compares analytic gradients with central differences, entry by entry.
///
/// `loss` evaluates the scalar loss at the current parameter values.
/// `analytic` fills the given buffer (pre-zeroed, one tensor per parameter)
/// with dLoss/dparam at the current values. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8). Non-finite values are counted and fail the
/// parameter rather than being skipped.
inline GradCheckReport grad_check(ParameterSet<double>& params, const std::function<double()>& loss,
                                  const std::function<void(GradSpan<double>)>& analytic, double tolerance = 1e-4,
                                  double step = 1e-5) {
  auto grads = params.make_grad_buffer();
  analytic(grads);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry{params.name(p), params.value(p).size()};
    auto& value = params.value(p);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = loss();
      value[i] = saved - step;
      const double down = loss();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[p][i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        ++entry.nan_count;
        continue;
      }
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
      }
    }
    entry.passed = entry.nan_count == 0 && entry.max_rel_error < tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace crossalign::nn
