#pragma once

// Gamma-family special functions: log-gamma, the regularized incomplete gamma
// function and its inverse, the beta function, digamma.
//
// Everything here is a pure function of its arguments. Non-finite inputs are
// rejected with DomainError instead of being propagated.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "csgemos/error.hpp"

namespace csgemos::math {

namespace detail {

inline constexpr double kEps = std::numeric_limits<double>::epsilon();
inline constexpr double kTiny = 1e-300;

inline void require_positive(double v, const char* what) {
  csgemos::detail::require_finite(v, what);
  if (v <= 0.0) throw DomainError(std::string(what) + ": argument must be positive");
}

// lgamma(z) - [(z - 1/2) ln z - z + ln(2 pi)/2]; valid for z >= 10.
inline double stirling_correction(double z) {
  const double r = 1.0 / (z * z);
  constexpr double c[] = {1.0 / 12.0,      -1.0 / 360.0,      1.0 / 1260.0, -1.0 / 1680.0,
                          1.0 / 1188.0,    -691.0 / 360360.0, 1.0 / 156.0,  -3617.0 / 122400.0};
  double s = c[7];
  for (int i = 6; i >= 0; --i) s = c[i] + r * s;
  return s / z;
}

// log1p(t) - t without cancellation for small |t|.
inline double log1pmx(double t) {
  if (std::abs(t) > 0.25) return std::log1p(t) - t;
  // -t^2/2 + t^3/3 - ...
  double power = t * t;
  double sum = 0.0;
  for (int n = 2; n < 60; ++n) {
    const double term = power / n;
    sum += (n % 2 == 0) ? -term : term;
    if (std::abs(term) < kEps * std::abs(sum)) break;
    power *= t;
  }
  return sum;
}

inline double lgamma_unchecked(double k) {
#if defined(__GLIBC__)
  int sign = 0;
  return ::lgamma_r(k, &sign);
#else
  return std::lgamma(k);
#endif
}

}  // namespace detail

/// ln Gamma(k) for k > 0.
inline double log_gamma(double k) {
  detail::require_positive(k, "log_gamma");
  return detail::lgamma_unchecked(k);
}

/// ln( x^k e^{-x} / Gamma(k) ), the common prefactor of the incomplete gamma
/// series and continued fraction. Evaluated through the Stirling correction for
/// large k so that it stays accurate when k ln x and lgamma(k) nearly cancel.
/// Requires k > 0, x > 0.
inline double log_gamma_kernel(double k, double x) {
  if (k < 10.0) return k * std::log(x) - x - detail::lgamma_unchecked(k);
  const double t = (x - k) / k;
  return k * detail::log1pmx(t) + 0.5 * std::log(k / (2.0 * std::numbers::pi)) -
         detail::stirling_correction(k);
}

namespace detail {

inline int max_terms(double k) { return 1000 + static_cast<int>(40.0 * std::sqrt(k)); }

// P(k, x) by power series; use for x < k + 1.
inline double inc_gamma_series(double k, double x) {
  double sum = 1.0;
  double term = 1.0;
  const int cap = max_terms(k);
  for (int n = 1; n < cap; ++n) {
    term *= x / (k + n);
    sum += term;
    if (term < sum * kEps) break;
  }
  return std::exp(log_gamma_kernel(k, x) - std::log(k)) * sum;
}

// Q(k, x) by Lentz's continued fraction; use for x >= k + 1.
inline double inc_gamma_cf(double k, double x) {
  double b = x + 1.0 - k;
  double c = 1.0 / kTiny;
  double d = 1.0 / b;
  double h = d;
  const int cap = max_terms(k);
  for (int i = 1; i < cap; ++i) {
    const double an = -i * (i - k);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return std::exp(log_gamma_kernel(k, x)) * h;
}

inline void check_inc_gamma_args(double k, double x, const char* what) {
  require_positive(k, what);
  csgemos::detail::require_finite(x, what);
  if (x < 0.0) throw DomainError(std::string(what) + ": x must be nonnegative");
}

}  // namespace detail

/// Regularized lower incomplete gamma function P(k, x), the CDF of Gamma(k, 1).
inline double reg_inc_gamma(double k, double x) {
  detail::check_inc_gamma_args(k, x, "reg_inc_gamma");
  if (x == 0.0) return 0.0;
  if (x < k + 1.0) return std::clamp(detail::inc_gamma_series(k, x), 0.0, 1.0);
  return std::clamp(1.0 - detail::inc_gamma_cf(k, x), 0.0, 1.0);
}

/// Regularized upper incomplete gamma function Q(k, x) = 1 - P(k, x), computed
/// without forming the complement where that would lose precision.
inline double reg_inc_gamma_upper(double k, double x) {
  detail::check_inc_gamma_args(k, x, "reg_inc_gamma_upper");
  if (x == 0.0) return 1.0;
  if (x < k + 1.0) return std::clamp(1.0 - detail::inc_gamma_series(k, x), 0.0, 1.0);
  return std::clamp(detail::inc_gamma_cf(k, x), 0.0, 1.0);
}

/// Density of Gamma(k, 1) at x > 0.
inline double gamma_unit_density(double k, double x) {
  if (x <= 0.0) return 0.0;
  return std::exp(log_gamma_kernel(k, x)) / x;
}

/// Standard normal quantile (Acklam's rational approximation, |rel err| < 1.2e-9).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0, 1)");
  constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                          1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                          6.680131188771972e+01,  -1.328068155288572e+01};
  constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                          -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                          3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Inverse of P(k, .): the x >= 0 with P(k, x) = p, for 0 <= p < 1.
///
/// Newton iteration from a Wilson-Hilferty (or small-x power law) seed, kept
/// inside a shrinking bracket; steps that leave the bracket fall back to
/// bisection, which is geometric when the bracket spans decades.
inline double inv_reg_inc_gamma(double k, double p) {
  detail::require_positive(k, "inv_reg_inc_gamma");
  csgemos::detail::require_finite(p, "inv_reg_inc_gamma");
  if (p < 0.0 || p >= 1.0) throw DomainError("inv_reg_inc_gamma: p must lie in [0, 1)");
  if (p == 0.0) return 0.0;

  // Small-x approximation P(k, x) ~ x^k / Gamma(k + 1).
  const double power_seed = std::exp((std::log(p) + detail::lgamma_unchecked(k + 1.0)) / k);
  double x;
  if (k < 1.0) {
    x = power_seed;
  } else {
    const double z = normal_quantile(p);
    const double t = 1.0 - 1.0 / (9.0 * k) + z / (3.0 * std::sqrt(k));
    x = t > 0.0 ? k * t * t * t : power_seed;
  }
  if (!(x > 0.0) || !std::isfinite(x)) x = k;

  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 2000; ++iter) {
    const double f = reg_inc_gamma(k, x) - p;
    if (f == 0.0) return x;
    if (f < 0.0) {
      lo = x;
    } else {
      hi = x;
    }
    const double dens = gamma_unit_density(k, x);
    double next = dens > 0.0 ? x - f / dens : std::numeric_limits<double>::quiet_NaN();
    if (!(next > lo && next < hi)) {
      if (std::isinf(hi)) {
        next = 2.0 * x + 1.0;
      } else if (lo == 0.0) {
        next = 0.5 * hi;
      } else if (hi > 4.0 * lo) {
        next = std::sqrt(lo * hi);
      } else {
        next = 0.5 * (lo + hi);
      }
    }
    if (std::abs(next - x) <= 4.0 * detail::kEps * x) return next;
    if (!std::isinf(hi) && hi - lo <= 4.0 * detail::kEps * hi) return next;
    x = next;
  }
  throw NumericError("inv_reg_inc_gamma: no convergence");
}

/// ln B(a, b).
inline double log_beta(double a, double b) {
  detail::require_positive(a, "log_beta");
  detail::require_positive(b, "log_beta");
  if (a > b) std::swap(a, b);
  if (b < 10.0) {
    return detail::lgamma_unchecked(a) + detail::lgamma_unchecked(b) -
           detail::lgamma_unchecked(a + b);
  }
  // lgamma(b) - lgamma(a + b) through the Stirling correction; the two
  // log-gammas are large and nearly equal when a << b.
  return detail::lgamma_unchecked(a) - a * std::log(b) - (a + b - 0.5) * std::log1p(a / b) + a +
         detail::stirling_correction(b) - detail::stirling_correction(a + b);
}

/// B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b).
inline double beta_fn(double a, double b) { return std::exp(log_beta(a, b)); }

/// Digamma psi(x) for x > 0.
inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double r = 1.0 / (x * x);
  const double series =
      r * (1.0 / 12.0 -
           r * (1.0 / 120.0 - r * (1.0 / 252.0 - r * (1.0 / 240.0 - r * (1.0 / 132.0)))));
  return shift + std::log(x) - 0.5 / x - series;
}

}  // namespace csgemos::math
