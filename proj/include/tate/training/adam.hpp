#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tate/model/params.hpp"

namespace tate {

/// Bias-corrected Adam moments for one ParameterSet, aligned by position.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;
};

/// One Adam update of every parameter from its accumulated gradient. A
/// parameter without a gradient slot is treated as having a zero gradient.
/// Throws NumericError naming the first parameter whose gradient is not finite;
/// nothing is updated in that case.
inline void adam_step(ParameterSet& params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
  const auto& vars = params.all();
  if (state.first.empty()) {
    for (const auto& v : vars) {
      state.first.emplace_back(v->value.shape());
      state.second.emplace_back(v->value.shape());
    }
  }
  if (state.first.size() != vars.size()) throw ContractError("adam_step: state does not match the parameter set");
  for (const auto& v : vars) {
    if (v->has_grad() && !v->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + v->name + "'");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(state.beta1, t);
  const double correct2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < vars.size(); ++p) {
    Node& node = *vars[p];
    Tensor& m = state.first[p];
    Tensor& s = state.second[p];
    if (!m.same_shape(node.value)) throw ContractError("adam_step: moment shape mismatch for '" + node.name + "'");
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      const double g = node.has_grad() ? node.grad[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      s[i] = state.beta2 * s[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correct1;
      const double s_hat = s[i] / correct2;
      node.value[i] -= lr * m_hat / (std::sqrt(s_hat) + state.epsilon);
    }
  }
}

}  // namespace tate
