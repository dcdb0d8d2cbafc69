#pragma once

// CSG EMOS: ensemble features, link models, score-minimizing estimation,
// rolling-window calibration and training-length tuning.
//
// The underlying gamma mean is affine in the per-group member sums,
//   mu = a0 + a1 * sum(group 1) + ... + am * sum(group m),
// the variance is one of several affine links in ensemble statistics, and the
// predictive law is CSG(k = mu^2 / sigma^2, theta = sigma^2 / mu, shift).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csgemos/dataset.hpp"
#include "csgemos/distributions.hpp"
#include "csgemos/error.hpp"
#include "csgemos/optimize.hpp"

namespace csgemos::emos {

struct Group {
  std::string name;
  std::vector<std::size_t> members;  // member column indices
};

/// Partition of the M ensemble members into m exchangeable groups.
class GroupingScheme {
 public:
  GroupingScheme() = default;
  GroupingScheme(std::vector<Group> groups, std::size_t member_count)
      : groups_(std::move(groups)), group_of_(member_count, npos) {
    if (groups_.empty()) throw DataError("grouping needs at least one group");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      if (groups_[g].members.empty()) {
        throw DataError("group '" + groups_[g].name + "' is empty");
      }
      for (std::size_t m : groups_[g].members) {
        if (m >= member_count) throw DataError("group '" + groups_[g].name + "' names an unknown member");
        if (group_of_[m] != npos) throw DataError("member assigned to more than one group");
        group_of_[m] = g;
      }
    }
    for (std::size_t m = 0; m < member_count; ++m) {
      if (group_of_[m] == npos) throw DataError("member not assigned to any group");
    }
  }

  /// One group per member: the fully non-exchangeable model.
  static GroupingScheme singletons(std::size_t member_count) {
    std::vector<Group> groups;
    for (std::size_t m = 0; m < member_count; ++m) {
      groups.push_back({"m" + std::to_string(m + 1), {m}});
    }
    return GroupingScheme(std::move(groups), member_count);
  }

  /// All members exchangeable.
  static GroupingScheme single_group(std::size_t member_count) {
    std::vector<std::size_t> all(member_count);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return GroupingScheme({{"all", std::move(all)}}, member_count);
  }

  std::size_t group_count() const { return groups_.size(); }
  std::size_t member_count() const { return group_of_.size(); }
  const std::vector<Group>& groups() const { return groups_; }
  std::size_t group_of(std::size_t member) const { return group_of_.at(member); }
  std::size_t group_size(std::size_t g) const { return groups_.at(g).members.size(); }

  friend bool operator==(const GroupingScheme& a, const GroupingScheme& b) {
    if (a.group_of_ != b.group_of_ || a.groups_.size() != b.groups_.size()) return false;
    for (std::size_t g = 0; g < a.groups_.size(); ++g) {
      if (a.groups_[g].name != b.groups_[g].name || a.groups_[g].members != b.groups_[g].members)
        return false;
    }
    return true;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<Group> groups_;
  std::vector<std::size_t> group_of_;
};

struct FeatureVector {
  std::vector<double> group_sums;
  double mean = 0.0;           // ensemble mean
  double variance = 0.0;       // S^2 with 1/(M-1); 0 for M = 1
  double mean_abs_diff = 0.0;  // MD = (1/M^2) sum_{k,l} |f_k - f_l|
};

/// Ensemble statistics entering the link functions. Every reduction runs over
/// sorted values, so reordering members within a group gives bit-identical
/// output.
inline FeatureVector extract_features(std::span<const double> members, const GroupingScheme& g) {
  if (members.size() != g.member_count()) {
    throw DataError("extract_features: case has " + std::to_string(members.size()) +
                    " members, grouping expects " + std::to_string(g.member_count()));
  }
  for (double v : members) {
    if (!std::isfinite(v)) throw DataError("extract_features: missing ensemble member");
    if (v < 0.0) throw DataError("extract_features: negative ensemble member");
  }
  FeatureVector fv;
  fv.group_sums.resize(g.group_count());
  std::vector<double> buf;
  for (std::size_t k = 0; k < g.group_count(); ++k) {
    buf.clear();
    for (std::size_t m : g.groups()[k].members) buf.push_back(members[m]);
    std::sort(buf.begin(), buf.end());
    fv.group_sums[k] = std::accumulate(buf.begin(), buf.end(), 0.0);
  }
  const double count = static_cast<double>(members.size());
  fv.mean = std::accumulate(fv.group_sums.begin(), fv.group_sums.end(), 0.0) / count;

  std::vector<double> sorted(members.begin(), members.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.size() > 1) {
    // Offsets from the minimum and consecutive gaps are exactly zero for tied
    // members, so S^2 and MD vanish exactly for a constant ensemble.
    double offset_mean = 0.0;
    for (double v : sorted) offset_mean += v - sorted.front();
    offset_mean /= count;
    double ss = 0.0;
    double pair_sum = 0.0;  // sum_{i<j} (x_(j) - x_(i))
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const double dev = (sorted[i] - sorted.front()) - offset_mean;
      ss += dev * dev;
      if (i + 1 < sorted.size()) {
        const double below = static_cast<double>(i + 1);
        pair_sum += (sorted[i + 1] - sorted[i]) * below * (count - below);
      }
    }
    fv.variance = ss / (count - 1.0);
    fv.mean_abs_diff = 2.0 * pair_sum / (count * count);
  }
  return fv;
}

enum class VarianceModel {
  MeanAffine,         // b0 + b1 * mean
  VarAffine,          // b0 + b1 * S^2
  MdAffine,           // b0 + b1 * MD
  VarPlusMean,        // b0 + b1 * S^2 + b2 * mean
  MeanAffineSquared,  // (b0 + b1 * mean)^2
};

constexpr std::size_t variance_coefficient_count(VarianceModel m) {
  return m == VarianceModel::VarPlusMean ? 3 : 2;
}

inline std::string_view to_string(VarianceModel m) {
  switch (m) {
    case VarianceModel::MeanAffine: return "mean";
    case VarianceModel::VarAffine: return "var";
    case VarianceModel::MdAffine: return "md";
    case VarianceModel::VarPlusMean: return "var+mean";
    case VarianceModel::MeanAffineSquared: return "mean-squared";
  }
  return "?";
}

inline VarianceModel parse_variance_model(std::string_view s) {
  for (auto m : {VarianceModel::MeanAffine, VarianceModel::VarAffine, VarianceModel::MdAffine,
                 VarianceModel::VarPlusMean, VarianceModel::MeanAffineSquared}) {
    if (to_string(m) == s) return m;
  }
  throw DataError("unknown variance link '" + std::string(s) + "'");
}

struct VarianceLink {
  VarianceModel model = VarianceModel::MeanAffine;
  std::vector<double> b{1.0, 0.5};

  double variance(const FeatureVector& fv) const {
    switch (model) {
      case VarianceModel::MeanAffine: return b[0] + b[1] * fv.mean;
      case VarianceModel::VarAffine: return b[0] + b[1] * fv.variance;
      case VarianceModel::MdAffine: return b[0] + b[1] * fv.mean_abs_diff;
      case VarianceModel::VarPlusMean: return b[0] + b[1] * fv.variance + b[2] * fv.mean;
      case VarianceModel::MeanAffineSquared: {
        const double s = b[0] + b[1] * fv.mean;
        return s * s;
      }
    }
    return 0.0;
  }

  /// d variance / d b.
  void gradient(const FeatureVector& fv, std::span<double> out) const {
    switch (model) {
      case VarianceModel::MeanAffine: out[0] = 1.0; out[1] = fv.mean; return;
      case VarianceModel::VarAffine: out[0] = 1.0; out[1] = fv.variance; return;
      case VarianceModel::MdAffine: out[0] = 1.0; out[1] = fv.mean_abs_diff; return;
      case VarianceModel::VarPlusMean:
        out[0] = 1.0; out[1] = fv.variance; out[2] = fv.mean; return;
      case VarianceModel::MeanAffineSquared: {
        const double s = b[0] + b[1] * fv.mean;
        out[0] = 2.0 * s;
        out[1] = 2.0 * s * fv.mean;
        return;
      }
    }
  }

  friend bool operator==(const VarianceLink&, const VarianceLink&) = default;
};

struct EmosCoefficients {
  std::vector<double> a;  // a0 (mm), then one weight per group
  VarianceLink variance;
  double shift = 0.0;  // mm
  GroupingScheme grouping;

  void validate() const {
    if (a.size() != grouping.group_count() + 1) {
      throw DataError("coefficient count " + std::to_string(a.size()) + " does not match " +
                      std::to_string(grouping.group_count()) + " groups");
    }
    if (variance.b.size() != variance_coefficient_count(variance.model)) {
      throw DataError("variance link '" + std::string(to_string(variance.model)) + "' needs " +
                      std::to_string(variance_coefficient_count(variance.model)) +
                      " coefficients");
    }
    const auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
    if (std::any_of(a.begin(), a.end(), bad) ||
        std::any_of(variance.b.begin(), variance.b.end(), bad) || bad(shift)) {
      throw DomainError("EMOS coefficients must be finite and nonnegative");
    }
  }

  friend bool operator==(const EmosCoefficients&, const EmosCoefficients&) = default;
};

/// Lower bounds applied to the linked mean and variance so that k and theta
/// stay defined for all-zero ensembles.
struct Floors {
  double mean = 1e-4;      // mm
  double variance = 1e-6;  // mm^2
};

namespace detail {

struct LinkedMoments {
  double mean;
  double variance;
  bool mean_floored;
  bool variance_floored;
};

inline LinkedMoments linked_moments(const EmosCoefficients& c, const FeatureVector& fv,
                                    const Floors& floors) {
  if (fv.group_sums.size() + 1 != c.a.size()) {
    throw DataError("predict: features have " + std::to_string(fv.group_sums.size()) +
                    " groups, coefficients expect " + std::to_string(c.a.size() - 1));
  }
  double mu = c.a[0];
  for (std::size_t k = 0; k < fv.group_sums.size(); ++k) mu += c.a[k + 1] * fv.group_sums[k];
  const double var = c.variance.variance(fv);
  return {std::max(mu, floors.mean), std::max(var, floors.variance), !(mu > floors.mean),
          !(var > floors.variance)};
}

}  // namespace detail

inline CsgParams predict(const EmosCoefficients& c, const FeatureVector& fv,
                         const Floors& floors = {}) {
  const auto m = detail::linked_moments(c, fv, floors);
  return CsgParams(m.mean * m.mean / m.variance, m.variance / m.mean, c.shift);
}

enum class Objective { Crps, LogScore };
enum class InitMode { Fixed, WarmStart };
enum class ConstraintMode { Square, Box };

inline std::string_view to_string(Objective o) { return o == Objective::Crps ? "crps" : "logscore"; }
inline Objective parse_objective(std::string_view s) {
  if (s == "crps") return Objective::Crps;
  if (s == "logscore") return Objective::LogScore;
  throw DataError("unknown objective '" + std::string(s) + "'");
}

struct FitConfig {
  Objective objective = Objective::Crps;
  InitMode init = InitMode::Fixed;
  VarianceModel variance_model = VarianceModel::MeanAffine;
  /// Starting point; when empty the fixed defaults are used. Rolling
  /// calibration fills this with the previous day's estimate in warm-start mode.
  std::optional<EmosCoefficients> initial;
  ConstraintMode constraint = ConstraintMode::Square;
  opt::Options optimizer;
  Floors floors;
  std::size_t min_cases = 50;
};

struct TrainingCase {
  FeatureVector features;
  double observation = 0.0;  // NaN when the case has no observation
};

inline std::vector<TrainingCase> make_training_set(std::span<const ForecastCase> cases,
                                                   const GroupingScheme& g) {
  std::vector<TrainingCase> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    out.push_back({extract_features(c.members, g),
                   c.observation.value_or(std::numeric_limits<double>::quiet_NaN())});
  }
  return out;
}

inline double mean_score(const EmosCoefficients& c, std::span<const TrainingCase> cases,
                         Objective objective, const Floors& floors = {}) {
  if (cases.empty()) throw DataError("mean score over an empty training set");
  double total = 0.0;
  for (const auto& tc : cases) {
    const CsgParams p = predict(c, tc.features, floors);
    total += objective == Objective::Crps ? csg_crps(p, tc.observation)
                                          : csg_logscore(p, tc.observation);
  }
  return total / static_cast<double>(cases.size());
}

/// Mean CRPS of the predictive laws over a training set.
inline double mean_crps(const EmosCoefficients& c, std::span<const TrainingCase> cases,
                        const Floors& floors = {}) {
  return mean_score(c, cases, Objective::Crps, floors);
}

/// Fixed starting point: a0 = 0.1, every member weight 1/M (mean equal to the
/// ensemble mean), b0 = 1, remaining b = 0.5, shift = 0.1.
inline EmosCoefficients default_initial(const GroupingScheme& g, VarianceModel model) {
  EmosCoefficients c;
  c.grouping = g;
  c.a.assign(g.group_count() + 1, 1.0 / static_cast<double>(g.member_count()));
  c.a[0] = 0.1;
  c.variance.model = model;
  c.variance.b.assign(variance_coefficient_count(model), 0.5);
  c.variance.b[0] = 1.0;
  c.shift = 0.1;
  return c;
}

struct FitDiagnostics {
  Objective objective = Objective::Crps;
  std::size_t cases = 0;
  int iterations = 0;
  int evaluations = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  bool converged = false;
  std::string message;
};

struct FitResult {
  EmosCoefficients coefficients;
  FitDiagnostics diagnostics;
};

namespace detail {

// Parameter layout: [a0..am, b..., shift].
inline std::vector<double> pack(const EmosCoefficients& c) {
  std::vector<double> x(c.a);
  x.insert(x.end(), c.variance.b.begin(), c.variance.b.end());
  x.push_back(c.shift);
  return x;
}

inline void unpack(std::span<const double> x, EmosCoefficients& c) {
  std::size_t i = 0;
  for (auto& v : c.a) v = x[i++];
  for (auto& v : c.variance.b) v = x[i++];
  c.shift = x[i];
}

// Mean score and gradient with respect to the packed coefficients.
inline double objective_with_gradient(EmosCoefficients& work, std::span<const double> x,
                                      std::span<double> grad, std::span<const TrainingCase> cases,
                                      Objective objective, const Floors& floors) {
  unpack(x, work);
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t na = work.a.size();
  const std::size_t nb = work.variance.b.size();
  std::vector<double> db(nb);
  double total = 0.0;
  for (const auto& tc : cases) {
    const auto m = linked_moments(work, tc.features, floors);
    const double mu = m.mean, var = m.variance;
    const CsgParams p(mu * mu / var, var / mu, work.shift);
    const ScoreGradient s = objective == Objective::Crps
                                ? csg_crps_gradient(p, tc.observation)
                                : csg_logscore_gradient(p, tc.observation);
    if (!std::isfinite(s.value)) return std::numeric_limits<double>::infinity();
    total += s.value;
    const double d_mu = m.mean_floored ? 0.0
                                       : s.d_shape * 2.0 * mu / var - s.d_scale * var / (mu * mu);
    const double d_var =
        m.variance_floored ? 0.0 : -s.d_shape * mu * mu / (var * var) + s.d_scale / mu;
    grad[0] += d_mu;
    for (std::size_t k = 1; k < na; ++k) grad[k] += d_mu * tc.features.group_sums[k - 1];
    work.variance.gradient(tc.features, db);
    for (std::size_t j = 0; j < nb; ++j) grad[na + j] += d_var * db[j];
    grad[na + nb] += s.d_shift;
  }
  const double n = static_cast<double>(cases.size());
  for (auto& g : grad) g /= n;
  return total / n;
}

}  // namespace detail

/// Estimate coefficients by minimizing the mean score over the training set
/// subject to all coefficients (and the shift) being nonnegative. The shift is
/// estimated jointly with the link coefficients.
///
/// Non-convergence is not an error: the best coefficients found are returned
/// with `diagnostics.converged == false`.
inline FitResult fit(std::span<const TrainingCase> cases, const GroupingScheme& g,
                     const FitConfig& cfg) {
  if (cases.size() < std::max<std::size_t>(cfg.min_cases, 1)) {
    throw DataError("insufficient training data: " + std::to_string(cases.size()) +
                    " cases, need at least " + std::to_string(std::max<std::size_t>(cfg.min_cases, 1)));
  }
  for (const auto& tc : cases) {
    if (tc.features.group_sums.size() != g.group_count()) {
      throw DataError("fit: features do not match the grouping");
    }
    if (!std::isfinite(tc.observation) || tc.observation < 0.0) {
      throw DataError("fit: training case without a valid observation");
    }
  }

  EmosCoefficients start = cfg.initial ? *cfg.initial : default_initial(g, cfg.variance_model);
  start.grouping = g;
  if (start.variance.model != cfg.variance_model && !cfg.initial) {
    start.variance.model = cfg.variance_model;
  }
  start.validate();

  EmosCoefficients work = start;
  std::vector<double> x0 = detail::pack(start);
  opt::Result r;
  if (cfg.constraint == ConstraintMode::Square) {
    // parameter = u^2; a zero start would pin the parameter at zero.
    std::vector<double> u0(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) u0[i] = std::sqrt(std::max(x0[i], 1e-6));
    std::vector<double> xbuf(x0.size()), gbuf(x0.size());
    auto f = [&](std::span<const double> u, std::span<double> gu) {
      for (std::size_t i = 0; i < u.size(); ++i) xbuf[i] = u[i] * u[i];
      const double v =
          detail::objective_with_gradient(work, xbuf, gbuf, cases, cfg.objective, cfg.floors);
      for (std::size_t i = 0; i < u.size(); ++i) gu[i] = 2.0 * u[i] * gbuf[i];
      return v;
    };
    r = opt::minimize_bfgs(f, u0, cfg.optimizer);
    for (auto& v : r.x) v = v * v;
  } else {
    auto f = [&](std::span<const double> x, std::span<double> gx) {
      return detail::objective_with_gradient(work, x, gx, cases, cfg.objective, cfg.floors);
    };
    const std::vector<double> lower(x0.size(), 0.0);
    r = opt::minimize_bfgs(f, x0, cfg.optimizer, lower);
  }

  FitResult out;
  out.coefficients = start;
  detail::unpack(r.x, out.coefficients);
  out.diagnostics.objective = cfg.objective;
  out.diagnostics.cases = cases.size();
  out.diagnostics.iterations = r.iterations;
  out.diagnostics.evaluations = r.evaluations;
  out.diagnostics.initial_objective = r.initial_value;
  out.diagnostics.final_objective = r.value;
  // A stalled line search at a tiny gradient is as good as it gets with a
  // finite-difference shape derivative.
  out.diagnostics.converged = r.converged;
  out.diagnostics.message = r.message;
  return out;
}

/// Forecasts for one verification date.
struct DailyForecast {
  Date date;
  std::size_t date_index = 0;
  std::size_t first_case = 0;  // index into Dataset::cases()
  FitResult fit;
  std::vector<CsgParams> forecasts;  // one per case on this date
};

struct RollingOptions {
  /// First distinct-date index to forecast; defaults to the window length.
  std::optional<std::size_t> first_date_index;
};

/// For every verification date, fit one regional coefficient set on all cases
/// of the `window` preceding available dates and predict that date's cases.
/// Windows count distinct dates present in the dataset, so dates removed by
/// the missing-data policy do not shorten the training period.
inline std::vector<DailyForecast> rolling_calibrate(const Dataset& ds, const GroupingScheme& g,
                                                    std::size_t window, const FitConfig& cfg,
                                                    const RollingOptions& options = {}) {
  if (window == 0) throw DataError("training window must be at least one day");
  const std::size_t n_dates = ds.dates().size();
  if (n_dates <= window) {
    throw DataError("window too long: training window of " + std::to_string(window) +
                    " days needs more than " + std::to_string(window) +
                    " available dates, dataset has " + std::to_string(n_dates));
  }
  const std::size_t first = options.first_date_index.value_or(window);
  if (first < window) {
    throw DataError("window too long: only " + std::to_string(first) +
                    " dates precede the first verification date, window is " +
                    std::to_string(window));
  }
  const auto training = make_training_set(ds.cases(), g);

  std::vector<DailyForecast> out;
  FitConfig day_cfg = cfg;
  for (std::size_t t = first; t < n_dates; ++t) {
    const std::size_t begin = ds.date_range(t - window).first;
    const std::size_t end = ds.date_range(t - 1).second;
    DailyForecast day;
    day.date = ds.dates()[t];
    day.date_index = t;
    day.fit = fit(std::span<const TrainingCase>(training).subspan(begin, end - begin), g, day_cfg);
    const auto [cb, ce] = ds.date_range(t);
    day.first_case = cb;
    for (std::size_t i = cb; i < ce; ++i) {
      day.forecasts.push_back(predict(day.fit.coefficients, training[i].features, cfg.floors));
    }
    if (cfg.init == InitMode::WarmStart) day_cfg.initial = day.fit.coefficients;
    out.push_back(std::move(day));
  }
  return out;
}

struct TuningRow {
  std::size_t window = 0;
  double mean_crps = 0.0;
  double mae = 0.0;  // of the predictive median
  std::size_t cases = 0;
};

/// Score each candidate training length on one common verification period:
/// every date after the first max(grid) available dates.
inline std::vector<TuningRow> tune_window(const Dataset& ds, const GroupingScheme& g,
                                          std::span<const std::size_t> grid, const FitConfig& cfg) {
  if (grid.empty()) throw DataError("tune_window: empty grid");
  const std::size_t longest = *std::max_element(grid.begin(), grid.end());
  if (ds.dates().size() <= longest) {
    throw DataError("insufficient span: longest window " + std::to_string(longest) +
                    " days leaves no verification dates in " +
                    std::to_string(ds.dates().size()) + " available dates");
  }
  std::vector<TuningRow> rows;
  for (std::size_t n : grid) {
    const auto days = rolling_calibrate(ds, g, n, cfg, {longest});
    TuningRow row;
    row.window = n;
    for (const auto& day : days) {
      for (std::size_t j = 0; j < day.forecasts.size(); ++j) {
        const double x = *ds.cases()[day.first_case + j].observation;
        row.mean_crps += csg_crps(day.forecasts[j], x);
        row.mae += std::abs(csg_quantile(day.forecasts[j], 0.5) - x);
        ++row.cases;
      }
    }
    row.mean_crps /= static_cast<double>(row.cases);
    row.mae /= static_cast<double>(row.cases);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace csgemos::emos
