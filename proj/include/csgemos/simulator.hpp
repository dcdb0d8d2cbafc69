#pragma once

// Synthetic ensembles whose observations follow a known CSG EMOS law.
//
// For every (date, station) a latent intensity g ~ Gamma(latent_shape,
// latent_scale) is drawn, member l is max(bias_l * g + noise_l * z_l, 0) with
// z_l standard normal, and the observation is drawn from
// predict(truth, features(members)).

#include <cstdint>
#include <string>
#include <vector>

#include "csgemos/dataset.hpp"
#include "csgemos/distributions.hpp"
#include "csgemos/emos.hpp"
#include "csgemos/random.hpp"

namespace csgemos::sim {

struct ScenarioSpec {
  emos::EmosCoefficients truth;
  std::size_t stations = 20;
  std::size_t dates = 100;
  Date start{2008, 1, 1};
  double latent_shape = 0.8;
  double latent_scale = 4.0;  // mm
  std::vector<double> member_bias;   // per member; empty means all 1
  std::vector<double> member_noise;  // per member sd in mm; empty means all `noise`
  double noise = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    truth.validate();
    const std::size_t m = truth.grouping.member_count();
    if (m == 0) throw DataError("scenario grouping has no members");
    if (stations == 0 || dates == 0) throw DataError("scenario needs at least one station and date");
    if (!member_bias.empty() && member_bias.size() != m)
      throw DataError("scenario member_bias has " + std::to_string(member_bias.size()) +
                      " entries, grouping has " + std::to_string(m) + " members");
    if (!member_noise.empty() && member_noise.size() != m)
      throw DataError("scenario member_noise has " + std::to_string(member_noise.size()) +
                      " entries, grouping has " + std::to_string(m) + " members");
    const auto bad = [](double v) { return !std::isfinite(v) || v < 0.0; };
    if (!(latent_shape > 0.0) || !(latent_scale > 0.0) || bad(noise) ||
        std::any_of(member_bias.begin(), member_bias.end(), bad) ||
        std::any_of(member_noise.begin(), member_noise.end(), bad)) {
      throw DomainError("scenario spread parameters must be positive and finite");
    }
  }
};

inline std::vector<std::string> member_names(std::size_t m) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < m; ++i) names.push_back("m" + std::to_string(i + 1));
  return names;
}

inline Dataset simulate(const ScenarioSpec& spec) {
  spec.validate();
  const auto& g = spec.truth.grouping;
  const std::size_t m = g.member_count();
  const RandomStream master(spec.seed);
  std::vector<ForecastCase> cases;
  cases.reserve(spec.stations * spec.dates);
  for (std::size_t t = 0; t < spec.dates; ++t) {
    RandomStream day = master.substream("date").substream(t);
    const Date date = spec.start.plus_days(static_cast<int>(t));
    for (std::size_t s = 0; s < spec.stations; ++s) {
      ForecastCase c;
      c.date = date;
      c.station = "S" + std::to_string(s + 1);
      const double latent = spec.latent_scale * day.gamma(spec.latent_shape);
      c.members.resize(m);
      for (std::size_t l = 0; l < m; ++l) {
        const double bias = spec.member_bias.empty() ? 1.0 : spec.member_bias[l];
        const double sd = spec.member_noise.empty() ? spec.noise : spec.member_noise[l];
        const double z = day.normal();
        c.members[l] = std::max(bias * latent + sd * z, 0.0);
      }
      const auto law = emos::predict(spec.truth, emos::extract_features(c.members, g));
      c.observation = csg_sample(law, day);
      cases.push_back(std::move(c));
    }
  }
  return Dataset(member_names(m), std::move(cases));
}

/// Eight distinguishable members, one weight each.
inline ScenarioSpec uwme_preset(std::size_t stations = 20, std::size_t dates = 100,
                                std::uint64_t seed = 1) {
  ScenarioSpec s;
  s.truth.grouping = emos::GroupingScheme::singletons(8);
  s.truth.a.assign(9, 0.12);
  s.truth.a[0] = 0.3;
  s.truth.variance = {emos::VarianceModel::MeanAffine, {0.8, 1.2}};
  s.truth.shift = 0.8;
  s.member_bias = {0.8, 0.9, 1.0, 1.1, 1.2, 0.95, 1.05, 1.0};
  s.noise = 1.0;
  s.stations = stations;
  s.dates = dates;
  s.seed = seed;
  return s;
}

/// Control plus ten exchangeable perturbed members.
inline ScenarioSpec aladin_preset(std::size_t stations = 20, std::size_t dates = 100,
                                  std::uint64_t seed = 1) {
  ScenarioSpec s;
  std::vector<std::size_t> perturbed(10);
  for (std::size_t i = 0; i < 10; ++i) perturbed[i] = i + 1;
  s.truth.grouping = emos::GroupingScheme({{"control", {0}}, {"perturbed", perturbed}}, 11);
  s.truth.a = {0.2, 0.3, 0.065};
  s.truth.variance = {emos::VarianceModel::MeanAffine, {0.3, 0.8}};
  s.truth.shift = 0.5;
  s.member_bias.assign(11, 1.0);
  s.member_noise.assign(11, 1.5);
  s.member_noise[0] = 0.7;
  s.stations = stations;
  s.dates = dates;
  s.seed = seed;
  return s;
}

}  // namespace csgemos::sim
