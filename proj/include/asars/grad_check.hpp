#pragma once

#include <functional>

#include "asars/params.hpp"

namespace asars {

// Central-difference gradient verification. `build` must deterministically
// produce a scalar loss from the current parameter values and leave analytic
// gradients in the store (i.e. run forward + backward). Returns
//   max over trainable entries of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Intended for the double-precision engine mode; float tolerances drown the
// difference quotient.
template <typename S>
double grad_check(ParamStore<S>& params, const std::function<S(ParamStore<S>&)>& build,
                  double eps) {
  if (!(eps > 0)) throw ConfigError("grad_check: eps must be positive");

  params.zero_grad();
  S base = build(params);
  if (!std::isfinite(static_cast<double>(base)))
    throw DataError("grad_check: non-finite loss at base point");

  // Freeze the analytic gradients before poking entries.
  std::vector<Mat<S>> analytic;
  analytic.reserve(params.count());
  for (size_t i = 0; i < params.count(); ++i) analytic.push_back(params.at(i).grad);

  double worst = 0.0;
  for (size_t pi = 0; pi < params.count(); ++pi) {
    Tensor<S>& t = params.at(pi);
    if (!t.requires_grad) continue;
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) {
        const S saved = t.value(i, j);
        t.value(i, j) = saved + static_cast<S>(eps);
        params.zero_grad();
        const double up = static_cast<double>(build(params));
        t.value(i, j) = saved - static_cast<S>(eps);
        params.zero_grad();
        const double down = static_cast<double>(build(params));
        t.value(i, j) = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
          throw DataError("grad_check: non-finite loss while perturbing '" +
                          t.name + "'");
        const double numeric = (up - down) / (2.0 * eps);
        const double a = static_cast<double>(analytic[pi](i, j));
        const double denom = std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, std::abs(a - numeric) / denom);
      }
    }
  }
  // Restore analytic grads so callers can keep using them.
  params.zero_grad();
  build(params);
  return worst;
}

}  // namespace asars
