#pragma once

// Command-line front end. `run` is callable in-process so tests can drive it
// without spawning a shell.
//
// Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.

#include <charconv>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "csgemos/dataio.hpp"
#include "csgemos/emos.hpp"
#include "csgemos/simulator.hpp"
#include "csgemos/verification.hpp"

namespace csgemos::cli {

enum ExitCode { Success = 0, Usage = 2, Data = 3, Numeric = 4 };

namespace detail {

inline std::vector<std::size_t> parse_grid(const std::string& text) {
  const auto bad = [&] { return CLI::ValidationError("--grid", "expected start:stop:step, got '" + text + "'"); };
  std::size_t v[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const auto end = i < 2 ? text.find(':', pos) : text.size();
    if (end == std::string::npos) throw bad();
    const auto res = std::from_chars(text.data() + pos, text.data() + end, v[i]);
    if (res.ec != std::errc{} || res.ptr != text.data() + end) throw bad();
    pos = end + 1;
  }
  if (v[0] == 0 || v[2] == 0 || v[1] < v[0]) throw bad();
  std::vector<std::size_t> grid;
  for (std::size_t n = v[0]; n <= v[1]; n += v[2]) grid.push_back(n);
  return grid;
}

struct FitFlags {
  std::string data;
  std::string grouping;
  std::size_t window = 70;
  std::string objective = "crps";
  std::string variance_link = "mean";
  std::string init = "fixed";
  std::string policy = "date-drop";
  std::size_t min_cases = 50;

  void add(CLI::App* app) {
    app->add_option("--data", data, "Dataset CSV (date,station,obs,members...)")->required()->check(CLI::ExistingFile);
    app->add_option("--grouping", grouping, "Grouping JSON; default is one group per member")->check(CLI::ExistingFile);
    app->add_option("--objective", objective, "Estimation score")->check(CLI::IsMember({"crps", "logscore"}))->capture_default_str();
    app->add_option("--variance-link", variance_link, "Variance link")
        ->check(CLI::IsMember({"mean", "var", "md", "var+mean", "mean-squared"}))
        ->capture_default_str();
    app->add_option("--init", init, "Initial values for consecutive fits")->check(CLI::IsMember({"fixed", "warm"}))->capture_default_str();
    app->add_option("--policy", policy, "Missing-data policy")->check(CLI::IsMember({"date-drop", "row-drop"}))->capture_default_str();
    app->add_option("--min-cases", min_cases, "Smallest accepted training set")->capture_default_str();
  }

  emos::FitConfig config() const {
    emos::FitConfig cfg;
    cfg.objective = emos::parse_objective(objective);
    cfg.variance_model = emos::parse_variance_model(variance_link);
    cfg.init = init == "warm" ? emos::InitMode::WarmStart : emos::InitMode::Fixed;
    cfg.min_cases = min_cases;
    return cfg;
  }
};

struct Loaded {
  io::ParseResult parsed;
  emos::GroupingScheme grouping;
};

inline Loaded load(const FitFlags& f, std::ostream& err, bool require_observation = true) {
  io::ParseOptions opts;
  opts.policy = io::parse_policy(f.policy);
  opts.require_observation = require_observation;
  Loaded l{io::load_dataset(f.data, opts), {}};
  if (!l.parsed.excluded.empty()) {
    std::set<std::string> dates;
    for (const auto& e : l.parsed.excluded) dates.insert(e.date);
    err << "excluded " << l.parsed.excluded.size() << " of " << l.parsed.rows << " rows on "
        << dates.size() << " dates (missing data)\n";
  }
  if (l.parsed.dataset.empty()) throw DataError("no usable cases in '" + f.data + "'");
  const auto& names = l.parsed.dataset.member_names();
  l.grouping = f.grouping.empty() ? emos::GroupingScheme::singletons(names.size())
                                  : io::parse_grouping(io::read_file(f.grouping), names);
  return l;
}

inline std::string level_label(double level) { return io::format_number(level); }

}  // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"CSG EMOS calibration of ensemble precipitation forecasts", "csgemos"};
  app.require_subcommand(1);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset");
  std::string preset, spec_path, sim_out, grouping_out;
  std::optional<std::size_t> stations, dates;
  std::uint64_t sim_seed = 0;
  sim_cmd->add_option("--preset", preset, "Scenario preset")->check(CLI::IsMember({"uwme", "aladin"}));
  sim_cmd->add_option("--spec", spec_path, "Scenario JSON")->check(CLI::ExistingFile);
  sim_cmd->add_option("--stations", stations, "Override the station count");
  sim_cmd->add_option("--dates", dates, "Override the number of dates");
  sim_cmd->add_option("--seed", sim_seed, "Random seed")->required();
  sim_cmd->add_option("--out", sim_out, "Dataset CSV to write")->required();
  sim_cmd->add_option("--grouping-out", grouping_out, "Also write the scenario's grouping JSON");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Fit coefficients on the latest training window");
  detail::FitFlags fit_flags;
  std::string fit_out;
  fit_flags.add(fit_cmd);
  fit_cmd->add_option("--window", fit_flags.window, "Training days")->capture_default_str();
  fit_cmd->add_option("--out", fit_out, "Coefficients JSON to write")->required();

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Predictive laws for every case of a dataset");
  std::string pred_data, pred_coef, pred_out, pred_policy = "date-drop";
  std::vector<double> pred_levels;
  pred_cmd->add_option("--data", pred_data, "Dataset CSV; obs may be NA")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--coefficients", pred_coef, "Coefficients JSON")->required()->check(CLI::ExistingFile);
  pred_cmd->add_option("--levels", pred_levels, "Central interval levels")->delimiter(',');
  pred_cmd->add_option("--policy", pred_policy, "Missing-data policy")->check(CLI::IsMember({"date-drop", "row-drop"}));
  pred_cmd->add_option("--out", pred_out, "CSV to write")->required();

  // verify
  auto* ver_cmd = app.add_subcommand("verify", "Rolling calibration and verification report");
  detail::FitFlags ver_flags;
  std::vector<double> thresholds{0.0, 5.0, 15.0, 25.0, 30.0};
  std::vector<double> levels;
  std::uint64_t ver_seed = 0;
  std::size_t dm_lag = 0;
  std::string ver_out;
  ver_flags.add(ver_cmd);
  ver_cmd->add_option("--window", ver_flags.window, "Training days")->capture_default_str();
  ver_cmd->add_option("--thresholds", thresholds, "Brier thresholds in mm")->delimiter(',')->capture_default_str();
  ver_cmd->add_option("--levels", levels, "Central interval levels; default (M-1)/(M+1)")->delimiter(',');
  ver_cmd->add_option("--seed", ver_seed, "Seed for PIT and rank randomization")->required();
  ver_cmd->add_option("--dm-lag", dm_lag, "Bartlett lag of the DM variance")->capture_default_str();
  ver_cmd->add_option("--out", ver_out, "Report JSON to write")->required();

  // tune-window
  auto* tune_cmd = app.add_subcommand("tune-window", "Compare training-window lengths");
  detail::FitFlags tune_flags;
  std::string grid_text = "20:100:5", tune_out;
  tune_flags.add(tune_cmd);
  tune_cmd->add_option("--grid", grid_text, "start:stop:step in days")->capture_default_str();
  tune_cmd->add_option("--out", tune_out, "Tuning CSV to write")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? Success : Usage;
  }

  try {
    if (*sim_cmd) {
      if (preset.empty() == spec_path.empty()) {
        err << "simulate: give exactly one of --preset or --spec\n";
        return Usage;
      }
      sim::ScenarioSpec spec = !spec_path.empty() ? io::parse_scenario(io::read_file(spec_path))
                               : preset == "uwme" ? sim::uwme_preset()
                                                  : sim::aladin_preset();
      if (stations) spec.stations = *stations;
      if (dates) spec.dates = *dates;
      spec.seed = sim_seed;
      const Dataset ds = sim::simulate(spec);
      io::write_file_atomic(sim_out, io::write_dataset(ds));
      if (!grouping_out.empty()) {
        io::write_file_atomic(grouping_out,
                              io::grouping_to_json(spec.truth.grouping, ds.member_names()).dump(2) + "\n");
      }
      out << "wrote " << ds.size() << " cases on " << ds.dates().size() << " dates to " << sim_out << "\n";
    } else if (*fit_cmd) {
      const auto l = detail::load(fit_flags, err);
      const auto& ds = l.parsed.dataset;
      const std::size_t n = fit_flags.window;
      if (n == 0 || ds.dates().size() < n) {
        throw DataError("window too long: training window of " + std::to_string(n) +
                        " days but the dataset has " + std::to_string(ds.dates().size()) +
                        " available dates");
      }
      const std::size_t first = ds.dates().size() - n;
      const std::size_t begin = ds.date_range(first).first;
      const auto training = emos::make_training_set(
          std::span<const ForecastCase>(ds.cases()).subspan(begin), l.grouping);
      const auto r = emos::fit(training, l.grouping, fit_flags.config());
      if (!r.diagnostics.converged) err << "warning: optimizer did not converge: " << r.diagnostics.message << "\n";
      io::CoefficientFile f{r.coefficients, ds.member_names(), r.diagnostics, n,
                            ds.dates()[first].iso(), ds.dates().back().iso()};
      io::write_file_atomic(fit_out, io::write_coefficients(f));
      out << "fitted on " << training.size() << " cases, mean " << emos::to_string(r.diagnostics.objective)
          << " " << r.diagnostics.final_objective << "\n";
    } else if (*pred_cmd) {
      const auto coef = io::parse_coefficients(io::read_file(pred_coef));
      io::ParseOptions opts;
      opts.policy = io::parse_policy(pred_policy);
      opts.require_observation = false;
      const auto parsed = io::load_dataset(pred_data, opts);
      if (parsed.dataset.member_names() != coef.member_names) {
        throw DataError("dataset member columns do not match the coefficients file");
      }
      std::string csv = "date,station,shape,scale,shift,point_mass,mean,median";
      for (double lv : pred_levels) {
        if (!(lv > 0.0 && lv < 1.0)) throw DomainError("levels must lie in (0, 1)");
        csv += ",lower_" + detail::level_label(lv) + ",upper_" + detail::level_label(lv);
      }
      csv += "\n";
      for (const auto& c : parsed.dataset.cases()) {
        const auto p = emos::predict(coef.coefficients, emos::extract_features(c.members, coef.coefficients.grouping));
        csv += c.date.iso() + "," + c.station + "," + io::format_number(p.shape()) + "," +
               io::format_number(p.scale()) + "," + io::format_number(p.shift()) + "," +
               io::format_number(csg_point_mass(p)) + "," + io::format_number(csg_mean(p)) + "," +
               io::format_number(csg_quantile(p, 0.5));
        for (double lv : pred_levels) {
          const auto [lo, hi] = verify::central_interval(verify::CsgForecast{p}, lv);
          csv += "," + io::format_number(lo) + "," + io::format_number(hi);
        }
        csv += "\n";
      }
      io::write_file_atomic(pred_out, csv);
      out << "wrote " << parsed.dataset.size() << " predictions to " << pred_out << "\n";
    } else if (*ver_cmd) {
      const auto l = detail::load(ver_flags, err);
      const auto& ds = l.parsed.dataset;
      const auto cfg = ver_flags.config();
      const auto days = emos::rolling_calibrate(ds, l.grouping, ver_flags.window, cfg);
      if (levels.empty()) {
        const double m = static_cast<double>(ds.member_count());
        levels.push_back((m - 1.0) / (m + 1.0));
      }
      std::vector<verify::CsgForecast> csg;
      std::vector<verify::EnsembleForecast> ens;
      std::vector<double> obs;
      io::ReportDocument doc;
      std::size_t not_converged = 0;
      for (const auto& day : days) {
        not_converged += day.fit.diagnostics.converged ? 0 : 1;
        for (std::size_t j = 0; j < day.forecasts.size(); ++j) {
          const auto& c = ds.cases()[day.first_case + j];
          csg.push_back({day.forecasts[j]});
          ens.emplace_back(c.members);
          obs.push_back(*c.observation);
          doc.cases.push_back({c.date.iso(), c.station, *c.observation});
        }
      }
      if (not_converged > 0) err << "warning: " << not_converged << " daily fits did not converge\n";
      const RandomStream master(ver_seed);
      RandomStream pit_rng = master.substream("pit");
      RandomStream rank_rng = master.substream("rank");
      doc.reports.push_back(verify::summarize<verify::CsgForecast>("csg_emos", csg, obs, thresholds, levels, pit_rng));
      doc.reports.push_back(verify::summarize<verify::EnsembleForecast>("ensemble", ens, obs, thresholds, levels, rank_rng));
      doc.comparisons.push_back(verify::compare(doc.reports[0], doc.reports[1], dm_lag));
      doc.run = {{"window", ver_flags.window},
                 {"objective", ver_flags.objective},
                 {"variance_link", ver_flags.variance_link},
                 {"init", ver_flags.init},
                 {"policy", ver_flags.policy},
                 {"seed", ver_seed},
                 {"dm_lag", dm_lag},
                 {"thresholds", thresholds},
                 {"levels", levels},
                 {"first_date", days.front().date.iso()},
                 {"last_date", days.back().date.iso()},
                 {"excluded_rows", l.parsed.excluded.size()}};
      io::write_file_atomic(ver_out, io::write_report(doc));
      out << "verified " << obs.size() << " cases on " << days.size() << " dates: mean CRPS "
          << doc.reports[0].mean_crps << " (ensemble " << doc.reports[1].mean_crps << ")\n";
    } else if (*tune_cmd) {
      const auto grid = detail::parse_grid(grid_text);
      const auto l = detail::load(tune_flags, err);
      const auto rows = emos::tune_window(l.parsed.dataset, l.grouping, grid, tune_flags.config());
      io::write_file_atomic(tune_out, io::write_tuning_table(rows));
      const auto best = std::min_element(rows.begin(), rows.end(),
                                         [](const auto& a, const auto& b) { return a.mean_crps < b.mean_crps; });
      out << "evaluated " << rows.size() << " windows; lowest mean CRPS at n=" << best->window << "\n";
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return Usage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return Numeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return Data;
  } catch (const DomainError& e) {
    err << "invalid value: " << e.what() << "\n";
    return Data;
  }
  return Success;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace csgemos::cli
