#pragma once

// Reference computations used only by the test suites. None of these call into
// the library's numerical code: special functions come from Boost.Math and
// integrals from adaptive Gauss-Kronrod or tanh-sinh quadrature.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace oracle {

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12) {
  if (b <= a) return 0.0;
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 15, tol, &err);
}

/// Double-exponential quadrature for integrands with endpoint singularities.
inline double integrate_singular(const std::function<double(double)>& f, double a, double b,
                                 double tol = 1e-13) {
  if (b <= a) return 0.0;
  boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate(f, a, b, tol);
}

/// Plain bisection for a nondecreasing f: smallest x in [lo, hi] with f(x) >= target.
inline double bisect(const std::function<double(double)>& f, double target, double lo, double hi) {
  for (int i = 0; i < 400 && hi - lo > 1e-15 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double gamma_p(double k, double x) { return x <= 0 ? 0.0 : boost::math::gamma_p(k, x); }

/// CDF of max(Y - shift, 0), Y ~ Gamma(k, theta), through Boost.
inline double csg_cdf(double k, double theta, double shift, double y) {
  if (y < 0) return 0.0;
  return gamma_p(k, (y + shift) / theta);
}

/// Upper integration limit beyond which the CSG tail is negligible.
inline double csg_tail_limit(double k, double theta, double x) {
  return x + k * theta + 50.0 * theta * std::sqrt(k) + 50.0 * theta;
}

/// CRPS as the integral of (F(y) - 1{y >= x})^2 over y >= 0, split at the
/// observation where the integrand jumps.
inline double csg_crps_quadrature(double k, double theta, double shift, double x) {
  const auto below = [&](double y) {
    const double f = csg_cdf(k, theta, shift, y);
    return f * f;
  };
  const auto above = [&](double y) {
    const double f = 1.0 - csg_cdf(k, theta, shift, y);
    return f * f;
  };
  const double mid = x + 10.0 * theta * (std::sqrt(k) + 1.0) + k * theta;
  const double top = csg_tail_limit(k, theta, x);
  return integrate_singular(below, 0.0, x, 1e-10) + integrate_singular(above, x, mid, 1e-10) +
         integrate_singular(above, mid, top, 1e-10);
}

/// Exact integral of (F_emp(y) - 1{y >= x})^2 for a step CDF: the integrand
/// is constant between consecutive breakpoints.
inline double ensemble_crps_step_integral(std::span<const double> members, double x) {
  std::vector<double> pts(members.begin(), members.end());
  pts.push_back(x);
  std::sort(pts.begin(), pts.end());
  const double m = static_cast<double>(members.size());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double a = pts[i];
    const double b = pts[i + 1];
    if (b <= a) continue;
    const double y = 0.5 * (a + b);
    double f = 0.0;
    for (double v : members) f += v <= y ? 1.0 : 0.0;
    f /= m;
    const double ind = y >= x ? 1.0 : 0.0;
    total += (f - ind) * (f - ind) * (b - a);
  }
  return total;
}

}  // namespace oracle
