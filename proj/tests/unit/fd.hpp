#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "scalestack/rng.hpp"
#include "scalestack/tensor.hpp"

namespace scalestack::testing {

// Central differences of a scalar function of `x`, perturbing x in place.
inline Tensor<double> numeric_gradient(Tensor<double>& x, const std::function<double()>& f,
                                       double eps = 1e-4) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f();
    x[i] = saved - eps;
    const double down = f();
    x[i] = saved;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

inline double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

// Weighted sum used to turn a tensor output into a scalar loss.
inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace scalestack::testing
