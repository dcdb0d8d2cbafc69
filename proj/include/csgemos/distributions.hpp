#pragma once

// Gamma and censored-and-shifted gamma (CSG) laws with their scoring rules.
//
// A CSG variable is X = max(Y - shift, 0) with Y ~ Gamma(shape, scale): its CDF
// is G(x + shift) for x >= 0 and 0 below, so it carries a point mass
// G(shift) at zero.

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "csgemos/error.hpp"
#include "csgemos/random.hpp"
#include "csgemos/special_math.hpp"

namespace csgemos {

struct MeanSd {
  double mean = 1.0;
  double sd = 1.0;
};

class GammaParams {
 public:
  GammaParams(double shape, double scale) : shape_(shape), scale_(scale) {
    math::detail::require_positive(shape, "GammaParams shape");
    math::detail::require_positive(scale, "GammaParams scale");
  }

  double shape() const { return shape_; }
  double scale() const { return scale_; }

  friend bool operator==(const GammaParams&, const GammaParams&) = default;

 private:
  double shape_;
  double scale_;
};

/// k = mu^2 / sigma^2, theta = sigma^2 / mu.
inline GammaParams from_mean_sd(const MeanSd& ms) {
  math::detail::require_positive(ms.mean, "from_mean_sd mean");
  math::detail::require_positive(ms.sd, "from_mean_sd sd");
  const double var = ms.sd * ms.sd;
  return GammaParams(ms.mean * ms.mean / var, var / ms.mean);
}

inline MeanSd to_mean_sd(const GammaParams& g) {
  return {g.shape() * g.scale(), std::sqrt(g.shape()) * g.scale()};
}

inline double gamma_cdf(const GammaParams& g, double x) {
  if (x <= 0.0) return 0.0;
  return math::reg_inc_gamma(g.shape(), x / g.scale());
}

inline double gamma_density(const GammaParams& g, double x) {
  if (x <= 0.0) return 0.0;
  return math::gamma_unit_density(g.shape(), x / g.scale()) / g.scale();
}

class CsgParams {
 public:
  CsgParams(double shape, double scale, double shift) : shape_(shape), scale_(scale), shift_(shift) {
    math::detail::require_positive(shape, "CsgParams shape");
    math::detail::require_positive(scale, "CsgParams scale");
    detail::require_finite(shift, "CsgParams shift");
    if (shift < 0.0) throw DomainError("CsgParams shift must be nonnegative");
  }
  CsgParams(const GammaParams& g, double shift) : CsgParams(g.shape(), g.scale(), shift) {}

  double shape() const { return shape_; }
  double scale() const { return scale_; }
  double shift() const { return shift_; }
  GammaParams underlying() const { return GammaParams(shape_, scale_); }

  friend bool operator==(const CsgParams&, const CsgParams&) = default;

 private:
  double shape_;
  double scale_;
  double shift_;
};

/// Probability of exactly zero, G(shift).
inline double csg_point_mass(const CsgParams& p) {
  if (p.shift() == 0.0) return 0.0;
  return math::reg_inc_gamma(p.shape(), p.shift() / p.scale());
}

inline double csg_cdf(const CsgParams& p, double x) {
  detail::require_finite(x, "csg_cdf");
  if (x < 0.0) return 0.0;
  return gamma_cdf(p.underlying(), x + p.shift());
}

/// Density of the continuous part at x > 0, g(x + shift). Together with the
/// point mass it integrates to one.
inline double csg_density(const CsgParams& p, double x) {
  detail::require_finite(x, "csg_density");
  if (x <= 0.0) throw DomainError("csg_density: x must be positive (use csg_point_mass at 0)");
  return gamma_density(p.underlying(), x + p.shift());
}

/// E[max(Y - shift, 0)] = theta k (1 - G_{k+1}(shift)) - shift (1 - G_k(shift)).
inline double csg_mean(const CsgParams& p) {
  const double k = p.shape();
  const double th = p.scale();
  const double d = p.shift() / th;
  if (d == 0.0) return k * th;
  const double upper_k = math::reg_inc_gamma_upper(k, d);
  const double upper_k1 = math::reg_inc_gamma_upper(k + 1.0, d);
  return std::max(0.0, th * k * upper_k1 - p.shift() * upper_k);
}

inline double csg_quantile(const CsgParams& p, double q) {
  detail::require_finite(q, "csg_quantile");
  if (!(q > 0.0 && q < 1.0)) throw DomainError("csg_quantile: level must lie in (0, 1)");
  if (q <= csg_point_mass(p)) return 0.0;
  return std::max(0.0, p.scale() * math::inv_reg_inc_gamma(p.shape(), q) - p.shift());
}

inline double csg_sample(const CsgParams& p, RandomStream& rng) {
  const double y = p.scale() * rng.gamma(p.shape());
  return std::max(y - p.shift(), 0.0);
}

namespace detail {

// P(k + 1, z) from P(k, z) by the downward recurrence.
inline double next_shape_cdf(double k, double z, double cdf_k) {
  if (z <= 0.0) return 0.0;
  return std::max(0.0, cdf_k - std::exp(math::log_gamma_kernel(k, z) - std::log(k)));
}

// Closed-form CRPS of the CSG law, all CDFs on scale theta.
inline double csg_crps_unchecked(double k, double theta, double shift, double x) {
  const double z = (x + shift) / theta;
  const double d = shift / theta;
  const double gz = math::reg_inc_gamma(k, z);
  const double gz1 = next_shape_cdf(k, z, gz);
  const double gd = d > 0.0 ? math::reg_inc_gamma(k, d) : 0.0;
  const double gd1 = d > 0.0 ? next_shape_cdf(k, d, gd) : 0.0;
  const double g2d = d > 0.0 ? math::reg_inc_gamma(2.0 * k, 2.0 * d) : 0.0;
  const double beta = math::beta_fn(0.5, k + 0.5);
  const double crps = (x + shift) * (2.0 * gz - 1.0) -
                      theta * k / std::numbers::pi * beta * (1.0 - g2d) +
                      theta * k * (1.0 + 2.0 * gd * gd1 - gd * gd - 2.0 * gz1) - shift * gd * gd;
  return std::max(crps, 0.0);
}

inline void check_observation(double x, const char* what) {
  require_finite(x, what);
  if (x < 0.0) throw DomainError(std::string(what) + ": observation must be nonnegative");
}

}  // namespace detail

/// Continuous ranked probability score of a CSG forecast at observation x >= 0.
inline double csg_crps(const CsgParams& p, double x) {
  detail::check_observation(x, "csg_crps");
  return detail::csg_crps_unchecked(p.shape(), p.scale(), p.shift(), x);
}

/// Negative log of the generalized density: -ln G(shift) at zero, -ln g(x + shift)
/// above. Returns +inf when x = 0 and the point mass vanishes.
inline double csg_logscore(const CsgParams& p, double x) {
  detail::check_observation(x, "csg_logscore");
  if (x == 0.0) {
    const double p0 = csg_point_mass(p);
    return p0 > 0.0 ? -std::log(p0) : std::numeric_limits<double>::infinity();
  }
  const double z = (x + p.shift()) / p.scale();
  return -(math::log_gamma_kernel(p.shape(), z) - std::log(z) - std::log(p.scale()));
}

/// Score value with partial derivatives in (shape, scale, shift).
struct ScoreGradient {
  double value = 0.0;
  double d_shape = 0.0;
  double d_scale = 0.0;
  double d_shift = 0.0;
};

namespace detail {

inline double shape_step(double k) { return 1e-5 * k; }

}  // namespace detail

/// CRPS and its gradient. The shift and scale derivatives are analytic
/// (d/d shift = 2G(x + shift) - 1 - G(shift)^2; scale via homogeneity of degree
/// one); the shape derivative is a central difference.
inline ScoreGradient csg_crps_gradient(const CsgParams& p, double x) {
  detail::check_observation(x, "csg_crps_gradient");
  const double k = p.shape();
  const double th = p.scale();
  const double s = p.shift();
  ScoreGradient out;
  out.value = detail::csg_crps_unchecked(k, th, s, x);
  const double gz = math::reg_inc_gamma(k, (x + s) / th);
  const double gd = s > 0.0 ? math::reg_inc_gamma(k, s / th) : 0.0;
  out.d_shift = 2.0 * gz - 1.0 - gd * gd;
  const double d_obs = x > 0.0 ? 2.0 * gz - 1.0 : 0.0;
  out.d_scale = (out.value - s * out.d_shift - x * d_obs) / th;
  const double h = detail::shape_step(k);
  out.d_shape = (detail::csg_crps_unchecked(k + h, th, s, x) -
                 detail::csg_crps_unchecked(k - h, th, s, x)) /
                (2.0 * h);
  return out;
}

/// Log score and its gradient; analytic except the shape derivative at x = 0.
inline ScoreGradient csg_logscore_gradient(const CsgParams& p, double x) {
  detail::check_observation(x, "csg_logscore_gradient");
  const double k = p.shape();
  const double th = p.scale();
  const double s = p.shift();
  ScoreGradient out;
  if (x > 0.0) {
    const double z = x + s;
    out.value = csg_logscore(p, x);
    out.d_shape = -(std::log(z / th) - math::digamma(k));
    out.d_scale = -(z / (th * th) - k / th);
    out.d_shift = -((k - 1.0) / z - 1.0 / th);
    return out;
  }
  const double d = s / th;
  const double p0 = s > 0.0 ? math::reg_inc_gamma(k, d) : 0.0;
  if (!(p0 > 0.0)) {
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  out.value = -std::log(p0);
  const double dens = math::gamma_unit_density(k, d) / th;  // g_{k,theta}(shift)
  out.d_shift = -dens / p0;
  out.d_scale = s / th * dens / p0;
  const double h = detail::shape_step(k);
  const double up = math::reg_inc_gamma(k + h, d);
  const double dn = math::reg_inc_gamma(k - h, d);
  out.d_shape = -(std::log(up) - std::log(dn)) / (2.0 * h);
  return out;
}

}  // namespace csgemos
