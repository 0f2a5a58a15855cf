#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tate/numerics/autodiff.hpp"

namespace tate {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_parameter;  // same order as the input list
};

/// Compares reverse-mode gradients of `f` against central differences.
///
/// The error for one coordinate is |g_analytic - g_numeric| / max(1, |g_numeric|);
/// the report carries the maximum overall and per parameter. `f` must be
/// deterministic: it is re-evaluated twice per coordinate.
inline GradCheckReport finite_diff_check(const std::function<Var()>& f, std::span<const Var> params,
                                         double eps = 1e-5) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");
  for (const auto& p : params) p->zero_grad();
  Var root = f();
  backward(root);

  GradCheckReport report;
  for (const auto& p : params) {
    Tensor analytic = p->has_grad() ? p->grad : Tensor(p->value.shape());
    GradCheckEntry entry{p->name, 0.0};
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = f()->value.item();
      p->value[i] = saved - eps;
      const double down = f()->value.item();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, err);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_parameter.push_back(std::move(entry));
  }
  for (const auto& p : params) p->zero_grad();
  return report;
}

}  // namespace tate
