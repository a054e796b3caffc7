#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "forge/tensor/tensor.hpp"

namespace forge {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;    // where the max was attained
  std::size_t element_index = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `fn` must rebuild its graph from `params` on every call.
/// Relative error per element: |analytic - numeric| / (|numeric| + eps).
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& fn, std::vector<Tensor<T>> params, double h = 1e-5,
                           double eps = 1e-6) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  const auto loss = fn();
  if (!std::isfinite(static_cast<double>(loss.item()))) throw NumericError("grad_check: non-finite loss");
  loss.backward();

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const std::vector<T> analytic = p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                                 : std::vector<T>(p.numel(), T(0));
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T saved = data[i];
      data[i] = saved + static_cast<T>(h);
      const double plus = static_cast<double>(fn().item());
      data[i] = saved - static_cast<T>(h);
      const double minus = static_cast<double>(fn().item());
      data[i] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite value while perturbing parameter " + std::to_string(pi));
      }
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) / (std::abs(numeric) + eps);
      if (err > result.max_rel_error) result = {err, pi, i};
    }
  }
  return result;
}

}  // namespace forge
