#pragma once

// Quasi-Newton minimization (BFGS with Armijo backtracking), optionally with
// lower bounds handled by projection. Objectives are callables
// `double f(std::span<const double> x, std::span<double> grad)`.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "csgemos/error.hpp"

namespace csgemos::opt {

struct Options {
  /// Stop when the projected gradient's max-norm falls below this.
  double gradient_tolerance = 1e-7;
  /// Stop after two consecutive steps improving by less than this (relative).
  double objective_tolerance = 1e-11;
  int max_iterations = 500;
  int max_line_search = 50;
};

struct Result {
  std::vector<double> x;
  double value = 0.0;
  double initial_value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

template <class Objective>
Result minimize_bfgs(Objective&& f, std::vector<double> x, const Options& options,
                     std::span<const double> lower = {}) {
  const std::size_t n = x.size();
  const bool bounded = !lower.empty();
  if (bounded && lower.size() != n) throw DomainError("minimize_bfgs: bound size mismatch");
  if (bounded) {
    for (std::size_t i = 0; i < n; ++i) x[i] = std::max(x[i], lower[i]);
  }

  Result r;
  std::vector<double> g(n), xn(n), gn(n), d(n), s(n), y(n), hy(n);
  std::vector<double> h(n * n, 0.0);
  const auto reset_h = [&] {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) h[i * n + i] = 1.0;
  };
  reset_h();
  bool h_is_identity = true;

  double fx = f(std::span<const double>(x), std::span<double>(g));
  ++r.evaluations;
  if (!std::isfinite(fx)) throw NumericError("minimize_bfgs: objective is not finite at the start");
  r.initial_value = fx;

  const auto active = [&](std::size_t i) { return bounded && x[i] <= lower[i] && g[i] > 0.0; };
  const auto projected_norm = [&] {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active(i)) m = std::max(m, std::abs(g[i]));
    }
    return m;
  };

  int stalled = 0;
  for (r.iterations = 0; r.iterations < options.max_iterations; ++r.iterations) {
    const double gnorm = projected_norm();
    if (gnorm <= options.gradient_tolerance) {
      r.converged = true;
      r.message = "gradient tolerance reached";
      break;
    }

    // Search direction restricted to the free variables.
    double slope = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d[i] = 0.0;
      if (active(i)) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (!active(j)) d[i] -= h[i * n + j] * g[j];
      }
      slope += g[i] * d[i];
    }
    if (!(slope < 0.0)) {
      reset_h();
      h_is_identity = true;
      slope = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        d[i] = active(i) ? 0.0 : -g[i];
        slope += g[i] * d[i];
      }
    }

    double t = (r.iterations == 0) ? std::min(1.0, 1.0 / gnorm) : 1.0;
    bool accepted = false;
    double fn = fx;
    for (int ls = 0; ls < options.max_line_search; ++ls) {
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        xn[i] = x[i] + t * d[i];
        if (bounded) xn[i] = std::max(xn[i], lower[i]);
        decrease += g[i] * (xn[i] - x[i]);
      }
      fn = f(std::span<const double>(xn), std::span<double>(gn));
      ++r.evaluations;
      if (std::isfinite(fn) && fn <= fx + 1e-4 * decrease) {
        accepted = true;
        break;
      }
      t *= std::isfinite(fn) ? 0.5 : 0.1;
    }
    if (!accepted) {
      if (!h_is_identity) {
        reset_h();
        h_is_identity = true;
        continue;
      }
      r.message = "line search made no progress";
      break;
    }

    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xn[i] - x[i];
      y[i] = gn[i] - g[i];
    }
    const double improvement = fx - fn;
    x.swap(xn);
    g.swap(gn);
    fx = fn;

    if (improvement <= options.objective_tolerance * std::max(1.0, std::abs(fx))) {
      if (++stalled >= 2) {
        r.converged = true;
        r.message = "objective tolerance reached";
        ++r.iterations;
        break;
      }
    } else {
      stalled = 0;
    }

    double sy = 0.0, yy = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sy += s[i] * y[i];
      yy += y[i] * y[i];
      ss += s[i] * s[i];
    }
    if (sy <= 1e-12 * std::sqrt(ss * yy)) continue;
    if (h_is_identity) {
      const double scale = sy / yy;
      for (std::size_t i = 0; i < n; ++i) h[i * n + i] = scale;
      h_is_identity = false;
    }
    // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    const double rho = 1.0 / sy;
    double yhy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      hy[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) hy[i] += h[i * n + j] * y[j];
      yhy += y[i] * hy[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
      }
    }
  }
  if (r.message.empty()) r.message = "iteration limit reached";
  r.x = std::move(x);
  r.value = fx;
  return r;
}

}  // namespace csgemos::opt
