#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "mega/layers.hpp"

namespace mega::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  long checked = 0;
  long failures = 0;
};

/// Mixed relative/absolute error used by every finite-difference check.
inline double grad_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

/// Central differences over every parameter in `params`, compared with
/// `grads`. `loss` must re-evaluate using the current contents of `params`.
template <typename Params>
GradCheck finite_difference_check(Params& params, const Params& grads, const std::function<double()>& loss,
                                  double eps = 1e-5, double tol = 1e-4) {
  GradCheck out;
  auto p = params.layers();
  auto g = grads.layers();
  auto probe = [&](double& value, double analytic) {
    const double saved = value;
    value = saved + eps;
    const double up = loss();
    value = saved - eps;
    const double down = loss();
    value = saved;
    const double numeric = (up - down) / (2 * eps);
    const double err = grad_error(analytic, numeric);
    out.max_rel_error = std::max(out.max_rel_error, err);
    ++out.checked;
    if (err > tol) ++out.failures;
  };
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (Eigen::Index k = 0; k < p[i]->weight.size(); ++k) probe(p[i]->weight.data()[k], g[i]->weight.data()[k]);
    for (Eigen::Index k = 0; k < p[i]->bias.size(); ++k) probe(p[i]->bias.data()[k], g[i]->bias.data()[k]);
  }
  return out;
}

/// Composite Simpson rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace mega::testing
