#pragma once

#include "dfa/common.hpp"

#include <functional>

namespace dfa {

// Central finite differences of a scalar function of a parameter vector.
inline Vector central_difference(const std::function<double(const Vector&)>& f,
                                 const Vector& x, double step = 1e-5) {
  Vector g(x.size());
  Vector p = x;
  for (int i = 0; i < x.size(); ++i) {
    double orig = p[i];
    p[i] = orig + step;
    double up = f(p);
    p[i] = orig - step;
    double down = f(p);
    p[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// max_i |analytic_i - numeric_i| / (|analytic_i| + 1e-8)
inline double max_relative_error(const Eigen::Ref<const Vector>& analytic,
                                 const Eigen::Ref<const Vector>& numeric) {
  double worst = 0.0;
  for (int i = 0; i < analytic.size(); ++i) {
    double err = std::abs(analytic[i] - numeric[i]) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

// Convenience: compare an analytic gradient against central differences.
inline double gradient_check(const std::function<double(const Vector&)>& f,
                             const Vector& x, const Vector& analytic,
                             double step = 1e-5) {
  return max_relative_error(analytic, central_difference(f, x, step));
}

}  // namespace dfa
