// SPDX-License-Identifier: Apache-2.0
//
// Small 1-D quadrature helpers: adaptive Simpson integration and a
// tabulated inverse-CDF sampler for smooth densities on an interval.

#pragma once

#include "fis/types.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace fis {

namespace detail {

inline double simpson(const std::function<double(double)>& f, double a,
                      double fa, double b, double fb, double fm) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

inline double adaptive_simpson_rec(const std::function<double(double)>& f,
                                   double a, double fa, double b, double fb,
                                   double fm, double whole, double tol,
                                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, fa, m, fm, flm, left, 0.5 * tol,
                              depth - 1) +
         adaptive_simpson_rec(f, m, fm, b, fb, frm, right, 0.5 * tol,
                              depth - 1);
}

}  // namespace detail

/// Adaptive Simpson quadrature of f on [a, b]. The interval is seeded with
/// uniform panels before refinement so narrow features away from the probe
/// points are not skipped.
inline double integrate(const std::function<double(double)>& f, double a,
                        double b, double tol = 1e-12, int max_depth = 40,
                        int n_panels = 24) {
  const double h = (b - a) / n_panels;
  const double panel_tol = std::max(tol / n_panels, 1e-300);
  double total = 0.0;
  for (int k = 0; k < n_panels; ++k) {
    const double x0 = a + k * h, x1 = (k + 1 == n_panels) ? b : a + (k + 1) * h;
    const double f0 = f(x0), f1 = f(x1), fm = f(0.5 * (x0 + x1));
    const double whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
    total += detail::adaptive_simpson_rec(f, x0, f0, x1, f1, fm, whole,
                                          panel_tol, max_depth);
  }
  return total;
}

/// Inverse-CDF table for an unnormalized density on [a, b]. Sampling maps a
/// uniform in (0,1] through piecewise-linear interpolation of the inverted
/// CDF; resolution is controlled by the grid size.
class InverseCdfTable {
 public:
  InverseCdfTable(const std::function<double(double)>& density, double a,
                  double b, int n_grid = 4096)
      : x_(n_grid + 1), cdf_(n_grid + 1) {
    const double h = (b - a) / n_grid;
    std::vector<double> pdf(n_grid + 1);
    for (int i = 0; i <= n_grid; ++i) {
      x_[i] = a + h * i;
      pdf[i] = density(x_[i]);
    }
    cdf_[0] = 0.0;
    for (int i = 1; i <= n_grid; ++i)
      cdf_[i] = cdf_[i - 1] + 0.5 * h * (pdf[i - 1] + pdf[i]);
    const double z = cdf_[n_grid];
    if (!(z > 0.0)) throw NumericalError("InverseCdfTable: density integrates to zero");
    for (auto& c : cdf_) c /= z;
    cdf_.back() = 1.0;
  }

  double operator()(double u) const {
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.begin()) return x_.front();
    const auto i = static_cast<std::size_t>(it - cdf_.begin());
    const double c0 = cdf_[i - 1], c1 = cdf_[i];
    const double w = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.0;
    return x_[i - 1] + w * (x_[i] - x_[i - 1]);
  }

 private:
  std::vector<double> x_, cdf_;
};

}  // namespace fis
