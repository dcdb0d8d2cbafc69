#include "catch_amalgamated.hpp"

#include <algorithm>
#include <cmath>

#include "csgemos/emos.hpp"
#include "csgemos/simulator.hpp"
#include "oracles.hpp"

using namespace csgemos;
using namespace csgemos::emos;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

EmosCoefficients intercept_only(const GroupingScheme& g) {
  EmosCoefficients c;
  c.grouping = g;
  c.a.assign(g.group_count() + 1, 0.0);
  c.a[0] = 1.0;
  c.variance = {VarianceModel::MeanAffine, {1.0, 0.0}};
  c.shift = 0.0;
  return c;
}

std::vector<TrainingCase> training_from(const Dataset& ds, const GroupingScheme& g) {
  return make_training_set(ds.cases(), g);
}

}  // namespace

TEST_CASE("grouping validation", "[emos]") {
  CHECK_THROWS_AS(GroupingScheme({{"a", {0, 1}}, {"b", {1, 2}}}, 3), DataError);
  CHECK_THROWS_AS(GroupingScheme({{"a", {0}}}, 2), DataError);
  CHECK_THROWS_AS(GroupingScheme({{"a", {0, 5}}}, 2), DataError);
  CHECK_THROWS_AS(GroupingScheme({{"a", {}}, {"b", {0}}}, 1), DataError);
  const auto s = GroupingScheme::singletons(8);
  CHECK(s.group_count() == 8);
  CHECK(s.group_of(5) == 5);
  CHECK(GroupingScheme::single_group(4).group_size(0) == 4);
}

TEST_CASE("extract_features examples", "[emos]") {
  const double four[] = {2, 2, 2, 2};
  const auto f1 = extract_features(four, GroupingScheme::single_group(4));
  CHECK(f1.group_sums == std::vector<double>{8.0});
  CHECK(f1.mean == 2.0);
  CHECK(f1.variance == 0.0);
  CHECK(f1.mean_abs_diff == 0.0);

  const double two[] = {0, 2};
  const auto f2 = extract_features(two, GroupingScheme::singletons(2));
  CHECK(f2.group_sums == std::vector<double>{0.0, 2.0});
  CHECK(f2.mean == 1.0);
  CHECK(f2.variance == 2.0);
  CHECK(f2.mean_abs_diff == 1.0);

  const double one[] = {3.5};
  const auto f3 = extract_features(one, GroupingScheme::singletons(1));
  CHECK(f3.variance == 0.0);
  CHECK(f3.mean_abs_diff == 0.0);

  std::vector<double> eleven{4.0};
  for (int i = 1; i <= 10; ++i) eleven.push_back(0.5 * i);
  const auto aladin = sim::aladin_preset().truth.grouping;
  const auto f4 = extract_features(eleven, aladin);
  CHECK(f4.group_sums[0] == 4.0);
  CHECK(f4.group_sums[1] == 27.5);
}

TEST_CASE("extract_features agrees with the pairwise definitions", "[emos][property]") {
  RandomStream rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t m = 1 + rng.below(12);
    std::vector<double> x(m);
    for (auto& v : x) v = rng.uniform() < 0.3 ? 0.0 : 10.0 * rng.uniform();
    const auto f = extract_features(x, GroupingScheme::single_group(m));
    double mean = 0.0, ss = 0.0, md = 0.0;
    for (double v : x) mean += v / m;
    for (double v : x) ss += (v - mean) * (v - mean);
    for (double a : x)
      for (double b : x) md += std::abs(a - b);
    CHECK_THAT(f.mean, WithinAbs(mean, 1e-12));
    CHECK_THAT(f.variance, WithinAbs(m > 1 ? ss / (m - 1) : 0.0, 1e-10));
    CHECK_THAT(f.mean_abs_diff, WithinAbs(md / (m * m), 1e-12));
  }
}

TEST_CASE("extract_features rejects missing and negative members", "[emos]") {
  const double missing[] = {1.0, std::nan("")};
  CHECK_THROWS_AS(extract_features(missing, GroupingScheme::singletons(2)), DataError);
  const double negative[] = {1.0, -0.1};
  CHECK_THROWS_AS(extract_features(negative, GroupingScheme::singletons(2)), DataError);
  const double three[] = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(extract_features(three, GroupingScheme::singletons(2)), DataError);
}

TEST_CASE("permuting members within a group is bit-identical", "[emos][property]") {
  const auto g = sim::aladin_preset().truth.grouping;
  const auto c = sim::aladin_preset().truth;
  RandomStream rng(77);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> x(11);
    for (auto& v : x) v = rng.uniform() < 0.2 ? 0.0 : 1e3 * rng.uniform() * rng.uniform();
    std::vector<double> y = x;
    std::shuffle(y.begin() + 1, y.end(), rng);
    const auto fx = extract_features(x, g);
    const auto fy = extract_features(y, g);
    CHECK(fx.group_sums == fy.group_sums);
    CHECK(fx.mean == fy.mean);
    CHECK(fx.variance == fy.variance);
    CHECK(fx.mean_abs_diff == fy.mean_abs_diff);
    const auto px = predict(c, fx);
    const auto py = predict(c, fy);
    CHECK(px.shape() == py.shape());
    CHECK(px.scale() == py.scale());
    CHECK(csg_crps(px, 2.5) == csg_crps(py, 2.5));
  }
}

TEST_CASE("singleton grouping reproduces the member-weighted mean", "[emos]") {
  const auto c = sim::uwme_preset().truth;
  const double x[] = {0.0, 1.0, 2.5, 3.0, 0.2, 7.0, 1.1, 0.4};
  const auto f = extract_features(x, c.grouping);
  double mu = c.a[0];
  for (int l = 0; l < 8; ++l) mu += c.a[l + 1] * x[l];
  const auto p = predict(c, f);
  CHECK_THAT(p.shape() * p.scale(), WithinRel(mu, 1e-14));
}

TEST_CASE("predict examples", "[emos]") {
  const auto g = GroupingScheme::singletons(1);
  const double three[] = {3.0};
  const auto fv = extract_features(three, g);

  const auto p1 = predict(intercept_only(g), fv);
  CHECK(p1.shape() == 1.0);
  CHECK(p1.scale() == 1.0);
  CHECK(p1.shift() == 0.0);

  EmosCoefficients c;
  c.grouping = g;
  c.a = {0.1, 1.0};
  c.variance = {VarianceModel::MeanAffine, {0.5, 0.25}};
  c.shift = 0.7;
  const auto p2 = predict(c, fv);
  CHECK_THAT(p2.shape(), WithinRel(3.1 * 3.1 / 1.25, 1e-14));
  CHECK_THAT(p2.scale(), WithinRel(1.25 / 3.1, 1e-14));
  CHECK(p2.shift() == 0.7);

  EmosCoefficients z;
  z.grouping = GroupingScheme::single_group(4);
  z.a = {0.0, 0.3};
  z.variance = {VarianceModel::MeanAffine, {0.0, 1.0}};
  z.shift = 0.5;
  const double zeros[] = {0, 0, 0, 0};
  const auto p3 = predict(z, extract_features(zeros, z.grouping));
  CHECK_THAT(p3.shape() * p3.scale(), WithinRel(Floors{}.mean, 1e-12));
  CHECK(csg_point_mass(p3) > 0.99);
}

TEST_CASE("variance links", "[emos]") {
  FeatureVector fv{{6.0}, 2.0, 4.0, 1.5};
  CHECK(VarianceLink{VarianceModel::MeanAffine, {1, 2}}.variance(fv) == 5.0);
  CHECK(VarianceLink{VarianceModel::VarAffine, {1, 2}}.variance(fv) == 9.0);
  CHECK(VarianceLink{VarianceModel::MdAffine, {1, 2}}.variance(fv) == 4.0);
  CHECK(VarianceLink{VarianceModel::VarPlusMean, {1, 2, 3}}.variance(fv) == 15.0);
  CHECK(VarianceLink{VarianceModel::MeanAffineSquared, {1, 2}}.variance(fv) == 25.0);
  for (auto m : {VarianceModel::MeanAffine, VarianceModel::VarAffine, VarianceModel::MdAffine,
                 VarianceModel::VarPlusMean, VarianceModel::MeanAffineSquared}) {
    CHECK(parse_variance_model(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_variance_model("cubic"), DataError);
}

TEST_CASE("predict rejects mismatched dimensions", "[emos]") {
  const auto c = sim::uwme_preset().truth;
  FeatureVector fv{{1.0, 2.0}, 1.5, 0.5, 1.0};
  CHECK_THROWS_AS(predict(c, fv), DataError);
}

TEST_CASE("mean_crps examples", "[emos]") {
  const auto g = GroupingScheme::singletons(1);
  const double one[] = {1.0};
  const TrainingCase tc{extract_features(one, g), 0.0};
  const std::vector<TrainingCase> single{tc};
  CHECK_THAT(mean_crps(intercept_only(g), single), WithinAbs(0.5, 1e-14));
  const std::vector<TrainingCase> twice{tc, tc};
  CHECK(mean_crps(intercept_only(g), twice) == mean_crps(intercept_only(g), single));
  CHECK_THROWS_AS(mean_crps(intercept_only(g), std::span<const TrainingCase>{}), DataError);
}

TEST_CASE("mean_crps matches quadrature on synthetic cases", "[emos]") {
  auto spec = sim::aladin_preset(10, 10, 3);
  const auto ds = sim::simulate(spec);
  const auto tr = training_from(ds, spec.truth.grouping);
  double total = 0.0;
  for (const auto& tc : tr) {
    const auto p = predict(spec.truth, tc.features);
    total += oracle::csg_crps_quadrature(p.shape(), p.scale(), p.shift(), tc.observation);
  }
  CHECK_THAT(mean_crps(spec.truth, tr), WithinAbs(total / tr.size(), 1e-6));
}

TEST_CASE("objective gradient matches finite differences", "[emos]") {
  auto spec = sim::aladin_preset(10, 6, 9);
  const auto ds = sim::simulate(spec);
  const auto tr = training_from(ds, spec.truth.grouping);
  for (auto obj : {Objective::Crps, Objective::LogScore}) {
    for (auto model : {VarianceModel::MeanAffine, VarianceModel::VarPlusMean,
                       VarianceModel::MeanAffineSquared}) {
      auto c = default_initial(spec.truth.grouping, model);
      c.a = {0.4, 0.25, 0.08};
      c.shift = 0.3;
      auto work = c;
      auto x = emos::detail::pack(c);
      std::vector<double> grad(x.size()), scratch(x.size());
      emos::detail::objective_with_gradient(work, x, grad, tr, obj, {});
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double h = 1e-6 * std::max(1.0, x[i]);
        auto xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (emos::detail::objective_with_gradient(work, xp, scratch, tr, obj, {}) -
                           emos::detail::objective_with_gradient(work, xm, scratch, tr, obj, {})) /
                          (2.0 * h);
        INFO("objective=" << to_string(obj) << " link=" << to_string(model) << " i=" << i);
        CHECK_THAT(grad[i], WithinAbs(fd, 1e-5 * std::max(1.0, std::abs(fd))));
      }
    }
  }
}

TEST_CASE("fit recovers the generating law", "[emos][slow]") {
  for (auto spec : {sim::uwme_preset(20, 100, 11), sim::aladin_preset(20, 100, 12)}) {
    const auto ds = sim::simulate(spec);
    const auto tr = training_from(ds, spec.truth.grouping);
    FitConfig cfg;
    const auto r = fit(tr, spec.truth.grouping, cfg);
    const double truth = mean_crps(spec.truth, tr);
    const double fitted = mean_crps(r.coefficients, tr);
    INFO("truth=" << truth << " fitted=" << fitted << " " << r.diagnostics.message);
    CHECK(fitted <= r.diagnostics.initial_objective);
    CHECK(std::abs(fitted - truth) <= 0.01 * truth);
    CHECK_NOTHROW(r.coefficients.validate());
    CHECK(r.diagnostics.cases == 2000);
  }
}

TEST_CASE("fit is deterministic and the box variant agrees", "[emos]") {
  auto spec = sim::aladin_preset(10, 60, 21);
  const auto ds = sim::simulate(spec);
  const auto tr = training_from(ds, spec.truth.grouping);
  FitConfig cfg;
  const auto a = fit(tr, spec.truth.grouping, cfg);
  const auto b = fit(tr, spec.truth.grouping, cfg);
  CHECK(a.coefficients == b.coefficients);
  cfg.constraint = ConstraintMode::Box;
  const auto c = fit(tr, spec.truth.grouping, cfg);
  CHECK_THAT(c.diagnostics.final_objective, WithinRel(a.diagnostics.final_objective, 1e-4));
}

TEST_CASE("fit on all-zero observations concentrates mass at zero", "[emos]") {
  auto spec = sim::aladin_preset(10, 10, 4);
  const auto ds = sim::simulate(spec);
  auto tr = training_from(ds, spec.truth.grouping);
  for (auto& tc : tr) tc.observation = 0.0;
  const auto r = fit(tr, spec.truth.grouping, FitConfig{});
  for (const auto& tc : tr) {
    CHECK(csg_point_mass(predict(r.coefficients, tc.features)) >= 0.95);
  }
}

TEST_CASE("log-score fit cannot beat the CRPS fit in CRPS", "[emos]") {
  auto spec = sim::uwme_preset(20, 50, 8);
  const auto ds = sim::simulate(spec);
  const auto tr = training_from(ds, spec.truth.grouping);
  FitConfig cfg;
  const auto crps_fit = fit(tr, spec.truth.grouping, cfg);
  cfg.objective = Objective::LogScore;
  const auto ml_fit = fit(tr, spec.truth.grouping, cfg);
  CHECK(mean_crps(ml_fit.coefficients, tr) >= mean_crps(crps_fit.coefficients, tr));
  CHECK(ml_fit.diagnostics.objective == Objective::LogScore);
}

TEST_CASE("fit errors", "[emos]") {
  auto spec = sim::aladin_preset(5, 5, 4);
  const auto ds = sim::simulate(spec);
  auto tr = training_from(ds, spec.truth.grouping);
  CHECK_THROWS_AS(fit(tr, spec.truth.grouping, FitConfig{}), DataError);
  FitConfig small;
  small.min_cases = 10;
  CHECK_NOTHROW(fit(tr, spec.truth.grouping, small));
  tr[3].observation = std::nan("");
  CHECK_THROWS_AS(fit(tr, spec.truth.grouping, small), DataError);
}

TEST_CASE("rolling_calibrate window bookkeeping", "[emos]") {
  auto spec = sim::aladin_preset(60, 2, 5);
  const auto ds = sim::simulate(spec);
  FitConfig cfg;
  const auto days = rolling_calibrate(ds, spec.truth.grouping, 1, cfg);
  REQUIRE(days.size() == 1);
  CHECK(days[0].date == ds.dates()[1]);
  const auto first_day = make_training_set(ds.cases_on(0), spec.truth.grouping);
  const auto direct = fit(first_day, spec.truth.grouping, cfg);
  CHECK(days[0].fit.coefficients == direct.coefficients);
  CHECK(days[0].forecasts.size() == 60);
  CHECK_THROWS_AS(rolling_calibrate(ds, spec.truth.grouping, 2, cfg), DataError);
}

TEST_CASE("rolling_calibrate counts available dates, not calendar days", "[emos]") {
  auto spec = sim::aladin_preset(25, 6, 6);
  const auto full = sim::simulate(spec);
  std::vector<ForecastCase> kept;
  for (const auto& c : full.cases()) {
    if (c.date != full.dates()[2]) kept.push_back(c);
  }
  const Dataset gappy(full.member_names(), kept);
  REQUIRE(gappy.dates().size() == 5);
  FitConfig cfg;
  const auto days = rolling_calibrate(gappy, spec.truth.grouping, 3, cfg);
  REQUIRE(days.size() == 2);
  CHECK(days[0].date == full.dates()[4]);
  CHECK(days[0].fit.diagnostics.cases == 75);
}

TEST_CASE("rolling_calibrate emits one forecast day per date after the window", "[emos][slow]") {
  auto spec = sim::uwme_preset(3, 150, 2);
  const auto ds = sim::simulate(spec);
  FitConfig cfg;
  cfg.min_cases = 1;
  const auto days = rolling_calibrate(ds, spec.truth.grouping, 70, cfg);
  CHECK(days.size() == 80);
  cfg.init = InitMode::WarmStart;
  const auto warm = rolling_calibrate(ds, spec.truth.grouping, 70, cfg);
  CHECK(warm.size() == 80);
}

TEST_CASE("tune_window with a single length equals rolling calibration", "[emos]") {
  auto spec = sim::aladin_preset(10, 30, 10);
  const auto ds = sim::simulate(spec);
  FitConfig cfg;
  const std::size_t grid[] = {10};
  const auto rows = tune_window(ds, spec.truth.grouping, grid, cfg);
  REQUIRE(rows.size() == 1);
  const auto days = rolling_calibrate(ds, spec.truth.grouping, 10, cfg);
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& d : days) {
    for (std::size_t j = 0; j < d.forecasts.size(); ++j) {
      total += csg_crps(d.forecasts[j], *ds.cases()[d.first_case + j].observation);
      ++n;
    }
  }
  CHECK(rows[0].cases == n);
  CHECK_THAT(rows[0].mean_crps, WithinRel(total / n, 1e-12));
  const std::size_t too_long[] = {30};
  CHECK_THROWS_AS(tune_window(ds, spec.truth.grouping, too_long, cfg), DataError);
}

TEST_CASE("tune_window prefers short windows under drifting bias", "[emos][slow]") {
  // Members drift upward relative to the truth, so old training data misleads.
  auto spec = sim::aladin_preset(10, 90, 13);
  auto ds = sim::simulate(spec);
  std::vector<ForecastCase> drifted(ds.cases().begin(), ds.cases().end());
  for (std::size_t d = 0; d < ds.dates().size(); ++d) {
    const double factor = std::exp(-0.04 * static_cast<double>(d));
    for (auto [b, e] = ds.date_range(d); b < e; ++b) {
      for (auto& v : drifted[b].members) v *= factor;
    }
  }
  const Dataset drift(ds.member_names(), drifted);
  FitConfig cfg;
  cfg.min_cases = 50;
  const std::size_t grid[] = {10, 25, 40, 60};
  const auto rows = tune_window(drift, spec.truth.grouping, grid, cfg);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    INFO("n=" << rows[i].window << " crps=" << rows[i].mean_crps);
    CHECK(rows[i].mean_crps > rows[i - 1].mean_crps);
  }
}

TEST_CASE("var+mean with zero mean weight is the var link", "[emos]") {
  RandomStream rng(14);
  for (int i = 0; i < 500; ++i) {
    FeatureVector fv{{0.0}, 10.0 * rng.uniform(), 10.0 * rng.uniform(), rng.uniform()};
    const double b0 = rng.uniform(), b1 = rng.uniform();
    CHECK(VarianceLink{VarianceModel::VarPlusMean, {b0, b1, 0.0}}.variance(fv) ==
          VarianceLink{VarianceModel::VarAffine, {b0, b1}}.variance(fv));
  }
}
