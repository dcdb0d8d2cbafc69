#pragma once

// Verification of probabilistic precipitation forecasts: CRPS and Brier
// scores, skill scores, PIT and rank histograms, reliability tables, central
// prediction intervals, Diebold-Mariano and Kolmogorov-Smirnov tests.
//
// Forecasts are either CSG laws or raw ensembles; the latter use the empirical
// CDF for scores and plotting positions i/(M+1) for quantiles, so the
// ensemble range is the (M-1)/(M+1) central interval.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "csgemos/distributions.hpp"
#include "csgemos/error.hpp"
#include "csgemos/random.hpp"
#include "csgemos/special_math.hpp"

namespace csgemos::verify {

inline double crps_ensemble(std::span<const double> members, double x) {
  if (members.empty()) throw DataError("crps_ensemble: empty ensemble");
  std::vector<double> f(members.begin(), members.end());
  std::sort(f.begin(), f.end());
  const double m = static_cast<double>(f.size());
  double abs_obs = 0.0, pair = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    abs_obs += std::abs(f[i] - x);
    pair += f[i] * (2.0 * static_cast<double>(i) - m + 1.0);
  }
  return abs_obs / m - pair / (m * m);
}

class EnsembleForecast {
 public:
  explicit EnsembleForecast(std::span<const double> members)
      : sorted_(members.begin(), members.end()) {
    if (sorted_.empty()) throw DataError("ensemble forecast needs at least one member");
    std::sort(sorted_.begin(), sorted_.end());
  }

  const std::vector<double>& sorted() const { return sorted_; }
  std::size_t size() const { return sorted_.size(); }

  double cdf(double y) const {
    return static_cast<double>(std::upper_bound(sorted_.begin(), sorted_.end(), y) -
                               sorted_.begin()) /
           static_cast<double>(sorted_.size());
  }

  double quantile(double q) const {
    const double pos = q * static_cast<double>(sorted_.size() + 1);
    if (pos <= 1.0) return sorted_.front();
    if (pos >= static_cast<double>(sorted_.size())) return sorted_.back();
    const auto i = static_cast<std::size_t>(pos);
    const double w = pos - static_cast<double>(i);
    return sorted_[i - 1] + w * (sorted_[i] - sorted_[i - 1]);
  }

  double crps(double x) const { return crps_ensemble(sorted_, x); }

 private:
  std::vector<double> sorted_;
};

struct CsgForecast {
  CsgParams law;
  double cdf(double y) const { return csg_cdf(law, y); }
  double quantile(double q) const { return csg_quantile(law, q); }
  double crps(double x) const { return csg_crps(law, x); }
};

inline double brier_from_probability(double cdf_at_threshold, double x, double y) {
  const double ind = y >= x ? 1.0 : 0.0;
  return (cdf_at_threshold - ind) * (cdf_at_threshold - ind);
}

template <class Forecast>
double brier(const Forecast& f, double x, double y) {
  if (!(y >= 0.0)) throw DomainError("brier: threshold must be nonnegative");
  return brier_from_probability(f.cdf(y), x, y);
}

inline double skill_score(double score, double ref_score) {
  if (ref_score == 0.0) throw NumericError("skill_score: reference score is zero");
  return 1.0 - score / ref_score;
}

/// PIT value, randomized uniformly on [0, F(0)] for a zero observation.
template <class Forecast>
double pit(const Forecast& f, double x, RandomStream& rng) {
  if (!(x >= 0.0)) throw DomainError("pit: observation must be nonnegative");
  if (x > 0.0) return f.cdf(x);
  return rng.uniform() * f.cdf(0.0);
}

/// Rank of x in {members, x}, ties broken uniformly at random.
inline std::size_t rank(std::span<const double> members, double x, RandomStream& rng) {
  if (members.empty()) throw DataError("rank: empty ensemble");
  std::size_t below = 0, tied = 0;
  for (double v : members) {
    if (v < x) ++below;
    else if (v == x) ++tied;
  }
  return below + 1 + (tied > 0 ? rng.below(tied + 1) : 0);
}

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  bool empty = true;
  double mean_probability = 0.0;  // meaningful only when !empty
  double observed_frequency = 0.0;
  double log10_count = 0.0;
};

struct ReliabilityTable {
  std::vector<ReliabilityBin> bins;
  std::size_t total = 0;
};

/// Break points 0.05, 0.15, ..., 0.95 give eleven bins; each bin is
/// [lower, upper) except the last, which is closed.
template <class Outcomes>
ReliabilityTable reliability(std::span<const double> probs, const Outcomes& outcomes) {
  if (probs.size() != outcomes.size()) throw DataError("reliability: length mismatch");
  ReliabilityTable t;
  t.bins.resize(11);
  constexpr double edges[] = {0.0, 0.05, 0.15, 0.25, 0.35, 0.45, 0.55,
                              0.65, 0.75, 0.85, 0.95, 1.0};
  for (std::size_t b = 0; b < 11; ++b) {
    t.bins[b].lower = edges[b];
    t.bins[b].upper = edges[b + 1];
  }
  std::vector<double> prob_sum(11, 0.0), hits(11, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("reliability: probability outside [0, 1]");
    std::size_t b = 0;
    while (b < 10 && p >= t.bins[b].upper) ++b;
    ++t.bins[b].count;
    prob_sum[b] += p;
    hits[b] += outcomes[i] ? 1.0 : 0.0;
  }
  for (std::size_t b = 0; b < 11; ++b) {
    auto& bin = t.bins[b];
    bin.empty = bin.count == 0;
    if (!bin.empty) {
      const double n = static_cast<double>(bin.count);
      bin.mean_probability = prob_sum[b] / n;
      bin.observed_frequency = hits[b] / n;
      bin.log10_count = std::log10(n);
    }
  }
  t.total = probs.size();
  return t;
}

template <class Forecast>
std::pair<double, double> central_interval(const Forecast& f, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DomainError("central_interval: level must be in (0, 1)");
  const double half_alpha = 0.5 * (1.0 - level);
  return {f.quantile(half_alpha), f.quantile(1.0 - half_alpha)};
}

struct DmResult {
  double statistic = 0.0;
  double p_value = 1.0;  // two-sided, standard normal reference
  bool degenerate = false;
};

/// Diebold-Mariano test on per-case score differences a - b. Negative
/// statistics favour `a` for negatively oriented scores. The long-run variance
/// uses Bartlett weights up to `lag` (0 gives the plain variance with 1/n).
inline DmResult dm_statistic(std::span<const double> a, std::span<const double> b,
                             std::size_t lag = 0) {
  if (a.size() != b.size()) throw DataError("dm_statistic: series are not aligned");
  if (a.size() < 2 || lag >= a.size()) throw DataError("dm_statistic: series too short");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  const auto autocov = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t i = k; i < n; ++i) s += (d[i] - mean) * (d[i - k] - mean);
    return s / static_cast<double>(n);
  };
  double v = autocov(0);
  for (std::size_t k = 1; k <= lag; ++k) {
    v += 2.0 * (1.0 - static_cast<double>(k) / static_cast<double>(lag + 1)) * autocov(k);
  }
  DmResult r;
  if (!(v > 0.0)) {
    r.degenerate = true;
    if (mean == 0.0) return r;
    r.statistic = mean > 0.0 ? INFINITY : -INFINITY;
    r.p_value = 0.0;
    return r;
  }
  r.statistic = mean / std::sqrt(v / static_cast<double>(n));
  r.p_value = 2.0 * (1.0 - math::normal_cdf(std::abs(r.statistic)));
  return r;
}

/// Kolmogorov distribution survival function P(K > t).
inline double kolmogorov_sf(double t) {
  if (t <= 0.0) return 1.0;
  if (t < 1.18) {
    // Small-t form converges faster there.
    const double pi2 = std::numbers::pi * std::numbers::pi;
    double s = 0.0;
    for (int j = 1; j <= 50; ++j) {
      const double k = 2.0 * j - 1.0;
      s += std::exp(-k * k * pi2 / (8.0 * t * t));
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / t * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * t * t);
    s += (j % 2 == 1 ? term : -term);
    if (term < 1e-18) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample KS test against Uniform(0, 1) with the asymptotic Kolmogorov
/// distribution (Stephens' finite-n adjustment of the argument).
inline KsResult ks_test_uniform(std::span<const double> values) {
  if (values.size() < 10) throw DataError("ks_uniform: need at least 10 values");
  std::vector<double> u(values.begin(), values.end());
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] >= 0.0 && u[i] <= 1.0)) throw DomainError("ks_uniform: value outside [0, 1]");
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    d = std::max({d, hi - u[i], u[i] - lo});
  }
  const double rn = std::sqrt(n);
  return {d, kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)};
}

inline double ks_uniform(std::span<const double> values) { return ks_test_uniform(values).p_value; }

/// Mean KS p-value over `reps` subsamples drawn without replacement.
inline double ks_subsample_mean_p(std::span<const double> values, std::size_t reps,
                                  std::size_t size, RandomStream& rng) {
  if (size > values.size()) throw DataError("ks_subsample_mean_p: subsample larger than sample");
  if (reps == 0) throw DataError("ks_subsample_mean_p: need at least one replication");
  std::vector<double> pool(values.begin(), values.end());
  double total = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    // Partial Fisher-Yates: the first `size` entries become the subsample.
    for (std::size_t i = 0; i < size; ++i) {
      std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    }
    total += ks_uniform(std::span<const double>(pool).first(size));
  }
  return total / static_cast<double>(reps);
}

/// Pearson chi-square test of equal cell probabilities; returns the p-value.
inline double chi_square_uniform_p(std::span<const std::size_t> counts) {
  if (counts.size() < 2) throw DataError("chi-square test needs at least two cells");
  const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (n == 0.0) throw DataError("chi-square test on empty counts");
  const double expected = n / static_cast<double>(counts.size());
  double chi2 = 0.0;
  for (auto c : counts) {
    const double diff = static_cast<double>(c) - expected;
    chi2 += diff * diff / expected;
  }
  return math::reg_inc_gamma_upper(0.5 * static_cast<double>(counts.size() - 1), 0.5 * chi2);
}

struct IntervalStats {
  double level = 0.0;
  double coverage = 0.0;
  double average_width = 0.0;
};

struct ThresholdStats {
  double threshold = 0.0;
  double brier = 0.0;
  std::vector<double> per_case;
  ReliabilityTable reliability;  // event: observation exceeds the threshold
};

struct VerificationReport {
  std::string name;
  std::size_t cases = 0;
  double mean_crps = 0.0;
  double mae = 0.0;  // of the median forecast
  std::vector<double> crps;
  std::vector<double> abs_error;
  std::vector<IntervalStats> intervals;
  std::vector<ThresholdStats> thresholds;
  std::vector<double> pit;                // CSG forecasts
  std::optional<double> pit_ks_p;
  std::vector<std::size_t> rank_counts;   // ensembles, ranks 1..M+1
  std::optional<double> rank_chi2_p;
};

/// Score one method on aligned forecasts and observations. `rng` drives the
/// randomized PIT or rank of zero observations.
template <class Forecast>
VerificationReport summarize(std::string name, std::span<const Forecast> forecasts,
                             std::span<const double> observations,
                             std::span<const double> thresholds, std::span<const double> levels,
                             RandomStream& rng) {
  if (forecasts.size() != observations.size()) {
    throw DataError("summarize: " + std::to_string(forecasts.size()) + " forecasts but " +
                    std::to_string(observations.size()) + " observations");
  }
  if (forecasts.empty()) throw DataError("summarize: no forecast cases");
  if (thresholds.empty()) throw DataError("summarize: threshold list is empty");
  for (double y : thresholds) {
    if (!(y >= 0.0)) throw DomainError("summarize: thresholds must be nonnegative");
  }
  constexpr bool is_ensemble = std::is_same_v<Forecast, EnsembleForecast>;
  const std::size_t n = forecasts.size();

  VerificationReport r;
  r.name = std::move(name);
  r.cases = n;
  r.crps.resize(n);
  r.abs_error.resize(n);
  for (double level : levels) r.intervals.push_back({level, 0.0, 0.0});
  for (double y : thresholds) {
    ThresholdStats t;
    t.threshold = y;
    t.per_case.resize(n);
    r.thresholds.push_back(std::move(t));
  }
  std::vector<std::vector<double>> exceed_prob(thresholds.size(), std::vector<double>(n));
  std::vector<std::vector<bool>> exceeded(thresholds.size(), std::vector<bool>(n));
  if constexpr (is_ensemble) {
    r.rank_counts.assign(forecasts.front().size() + 1, 0);
  } else {
    r.pit.resize(n);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = forecasts[i];
    const double x = observations[i];
    if (!(x >= 0.0) || !std::isfinite(x)) throw DataError("summarize: invalid observation");
    r.crps[i] = f.crps(x);
    r.abs_error[i] = std::abs(f.quantile(0.5) - x);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const auto [lo, hi] = central_interval(f, levels[l]);
      r.intervals[l].coverage += (x >= lo && x <= hi) ? 1.0 : 0.0;
      r.intervals[l].average_width += hi - lo;
    }
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const double y = thresholds[t];
      const double fy = f.cdf(y);
      r.thresholds[t].per_case[i] = brier_from_probability(fy, x, y);
      exceed_prob[t][i] = 1.0 - fy;
      exceeded[t][i] = x > y;
    }
    if constexpr (is_ensemble) {
      if (f.size() + 1 != r.rank_counts.size()) {
        throw DataError("summarize: ensembles differ in size");
      }
      ++r.rank_counts[rank(f.sorted(), x, rng) - 1];
    } else {
      r.pit[i] = pit(f, x, rng);
    }
  }

  const double dn = static_cast<double>(n);
  r.mean_crps = std::accumulate(r.crps.begin(), r.crps.end(), 0.0) / dn;
  r.mae = std::accumulate(r.abs_error.begin(), r.abs_error.end(), 0.0) / dn;
  for (auto& iv : r.intervals) {
    iv.coverage /= dn;
    iv.average_width /= dn;
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    auto& ts = r.thresholds[t];
    ts.brier = std::accumulate(ts.per_case.begin(), ts.per_case.end(), 0.0) / dn;
    ts.reliability = reliability(exceed_prob[t], exceeded[t]);
  }
  if constexpr (is_ensemble) {
    r.rank_chi2_p = chi_square_uniform_p(r.rank_counts);
  } else if (n >= 10) {
    r.pit_ks_p = ks_uniform(r.pit);
  }
  return r;
}

struct ThresholdSkill {
  double threshold = 0.0;
  double bss = 0.0;
};

/// Skill and significance of `method` relative to `reference` (same cases).
struct Comparison {
  std::string method;
  std::string reference;
  double crpss = 0.0;
  std::vector<ThresholdSkill> bss;
  DmResult dm_crps;
  DmResult dm_mae;
};

inline Comparison compare(const VerificationReport& method, const VerificationReport& reference,
                          std::size_t dm_lag = 0) {
  if (method.cases != reference.cases || method.thresholds.size() != reference.thresholds.size()) {
    throw DataError("compare: reports cover different cases or thresholds");
  }
  Comparison c;
  c.method = method.name;
  c.reference = reference.name;
  c.crpss = skill_score(method.mean_crps, reference.mean_crps);
  for (std::size_t t = 0; t < method.thresholds.size(); ++t) {
    const double ref = reference.thresholds[t].brier;
    c.bss.push_back({method.thresholds[t].threshold,
                     ref > 0.0 ? skill_score(method.thresholds[t].brier, ref)
                               : std::numeric_limits<double>::quiet_NaN()});
  }
  if (method.cases >= 2) {
    c.dm_crps = dm_statistic(method.crps, reference.crps, dm_lag);
    c.dm_mae = dm_statistic(method.abs_error, reference.abs_error, dm_lag);
  }
  return c;
}

}  // namespace csgemos::verify
