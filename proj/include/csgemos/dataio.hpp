#pragma once

// File formats: dataset CSV, grouping / coefficient / scenario JSON, report
// JSON and the tuning table.
//
// Dataset CSV: header `date,station,obs,<member columns...>`, ISO dates,
// precipitation in mm, `NA` or an empty field for missing values.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "csgemos/dataset.hpp"
#include "csgemos/emos.hpp"
#include "csgemos/error.hpp"
#include "csgemos/simulator.hpp"
#include "csgemos/verification.hpp"

namespace csgemos::io {

using json = nlohmann::ordered_json;

/// Shortest decimal string that parses back to the same double.
inline std::string format_number(double v) {
  if (!std::isfinite(v)) throw DataError("cannot write a non-finite value");
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

enum class MissingPolicy { DateDrop, RowDrop };

inline MissingPolicy parse_policy(std::string_view s) {
  if (s == "date-drop") return MissingPolicy::DateDrop;
  if (s == "row-drop") return MissingPolicy::RowDrop;
  throw DataError("unknown missing-data policy '" + std::string(s) + "'");
}

struct Exclusion {
  std::size_t line = 0;  // 1-based, header is line 1
  std::string date;
  std::string station;
  std::string reason;
};

struct ParseOptions {
  MissingPolicy policy = MissingPolicy::DateDrop;
  /// When false, a missing observation is kept as "no observation" instead of
  /// triggering exclusion (prediction inputs).
  bool require_observation = true;
};

struct ParseResult {
  Dataset dataset;
  std::vector<Exclusion> excluded;
  std::size_t rows = 0;
};

inline ParseResult parse_dataset(std::string_view text, const ParseOptions& options = {}) {
  std::vector<std::string_view> lines;
  for (std::size_t pos = 0; pos < text.size();) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw DataError("dataset is empty: missing header");

  const auto header = split_csv_line(trim(lines[0]));
  if (header.size() < 4 || trim(header[0]) != "date" || trim(header[1]) != "station" ||
      trim(header[2]) != "obs") {
    throw DataError("malformed header: expected date,station,obs,<member columns>");
  }
  std::vector<std::string> members;
  std::set<std::string, std::less<>> seen;
  for (std::size_t i = 3; i < header.size(); ++i) {
    std::string name(trim(header[i]));
    if (name.empty()) throw DataError("malformed header: empty member column name");
    if (!seen.insert(name).second) throw DataError("malformed header: duplicate column '" + name + "'");
    members.push_back(std::move(name));
  }

  struct Row {
    std::size_t line;
    ForecastCase c;
    std::string missing;  // reason, empty when complete
  };
  std::vector<Row> rows;
  const auto value = [](std::string_view field, std::size_t line,
                        const std::string& column) -> std::optional<double> {
    field = trim(field);
    if (field.empty() || field == "NA") return std::nullopt;
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
      throw DataError("line " + std::to_string(line) + ": unparseable value '" + std::string(field) +
                      "' in column " + column);
    }
    if (v < 0.0) {
      throw DataError("line " + std::to_string(line) + ": negative precipitation " +
                      std::string(field) + " in column " + column);
    }
    return v;
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line_text = trim(lines[i]);
    const std::size_t line = i + 1;
    if (line_text.empty()) continue;
    const auto fields = split_csv_line(line_text);
    if (fields.size() != header.size()) {
      throw DataError("line " + std::to_string(line) + ": " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    Row r;
    r.line = line;
    try {
      r.c.date = Date::parse(trim(fields[0]));
    } catch (const DataError&) {
      throw DataError("line " + std::to_string(line) + ": unparseable date '" +
                      std::string(trim(fields[0])) + "'");
    }
    r.c.station = std::string(trim(fields[1]));
    if (r.c.station.empty()) throw DataError("line " + std::to_string(line) + ": empty station id");
    r.c.observation = value(fields[2], line, "obs");
    if (!r.c.observation && options.require_observation) r.missing = "missing observation";
    r.c.members.resize(members.size());
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto v = value(fields[m + 3], line, members[m]);
      if (!v) {
        if (r.missing.empty()) r.missing = "missing member " + members[m];
        r.c.members[m] = std::numeric_limits<double>::quiet_NaN();
      } else {
        r.c.members[m] = *v;
      }
    }
    rows.push_back(std::move(r));
  }

  std::set<Date> bad_dates;
  if (options.policy == MissingPolicy::DateDrop) {
    for (const auto& r : rows) {
      if (!r.missing.empty()) bad_dates.insert(r.c.date);
    }
  }
  ParseResult out;
  out.rows = rows.size();
  std::vector<ForecastCase> kept;
  for (auto& r : rows) {
    if (!r.missing.empty()) {
      out.excluded.push_back({r.line, r.c.date.iso(), r.c.station, r.missing});
    } else if (bad_dates.count(r.c.date)) {
      out.excluded.push_back({r.line, r.c.date.iso(), r.c.station, "date dropped: missing data on this date"});
    } else {
      kept.push_back(std::move(r.c));
    }
  }
  out.dataset = Dataset(std::move(members), std::move(kept));
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write through a temporary file in the same directory, then rename.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline ParseResult load_dataset(const std::filesystem::path& path, const ParseOptions& options = {}) {
  return parse_dataset(read_file(path), options);
}

inline std::string write_dataset(const Dataset& ds) {
  std::string out = "date,station,obs";
  for (const auto& m : ds.member_names()) out += "," + m;
  out += "\n";
  for (const auto& c : ds.cases()) {
    out += c.date.iso() + "," + c.station + ",";
    out += c.observation ? format_number(*c.observation) : "NA";
    for (double v : c.members) out += "," + format_number(v);
    out += "\n";
  }
  return out;
}

// ---- grouping --------------------------------------------------------------

inline json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string(what) + ": invalid JSON: " + e.what());
  }
}

/// Either `[{"name": ..., "members": [...]}, ...]` or `{"name": [...], ...}`,
/// member names referring to dataset columns.
inline emos::GroupingScheme grouping_from_json(const json& j,
                                               const std::vector<std::string>& member_names) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < member_names.size(); ++i) index[member_names[i]] = i;
  std::vector<emos::Group> groups;
  const auto add = [&](const std::string& name, const json& list) {
    if (!list.is_array()) throw DataError("grouping: members of '" + name + "' must be a list");
    emos::Group g{name, {}};
    for (const auto& m : list) {
      if (!m.is_string()) throw DataError("grouping: member names must be strings");
      const auto it = index.find(m.get<std::string>());
      if (it == index.end()) throw DataError("grouping: unknown member '" + m.get<std::string>() + "'");
      g.members.push_back(it->second);
    }
    groups.push_back(std::move(g));
  };
  try {
    if (j.is_array()) {
      for (const auto& g : j) add(g.at("name").get<std::string>(), g.at("members"));
    } else if (j.is_object()) {
      for (const auto& [name, list] : j.items()) add(name, list);
    } else {
      throw DataError("grouping: expected a list or an object");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("grouping: ") + e.what());
  }
  for (const auto& g : groups) {
    for (std::size_t a = 0; a < g.members.size(); ++a)
      for (std::size_t b = a + 1; b < g.members.size(); ++b)
        if (g.members[a] == g.members[b])
          throw DataError("grouping: member '" + member_names[g.members[a]] + "' listed twice");
  }
  try {
    return emos::GroupingScheme(std::move(groups), member_names.size());
  } catch (const DataError& e) {
    throw DataError(std::string("grouping: ") + e.what());
  }
}

inline emos::GroupingScheme parse_grouping(std::string_view text,
                                           const std::vector<std::string>& member_names) {
  return grouping_from_json(parse_json(text, "grouping"), member_names);
}

inline json grouping_to_json(const emos::GroupingScheme& g,
                             const std::vector<std::string>& member_names) {
  json out = json::array();
  for (const auto& grp : g.groups()) {
    json names = json::array();
    for (auto m : grp.members) names.push_back(member_names.at(m));
    out.push_back({{"name", grp.name}, {"members", names}});
  }
  return out;
}

// ---- coefficients ------------------------------------------------------------

struct CoefficientFile {
  emos::EmosCoefficients coefficients;
  std::vector<std::string> member_names;
  std::optional<emos::FitDiagnostics> diagnostics;
  std::optional<std::size_t> window;
  std::string first_training_date;
  std::string last_training_date;
};

inline std::string write_coefficients(const CoefficientFile& f) {
  const auto& c = f.coefficients;
  json j;
  j["member_names"] = f.member_names;
  j["grouping"] = grouping_to_json(c.grouping, f.member_names);
  j["variance_link"] = std::string(emos::to_string(c.variance.model));
  j["a"] = c.a;
  j["b"] = c.variance.b;
  j["delta"] = c.shift;
  if (f.window) {
    j["training"] = {{"window", *f.window},
                     {"first_date", f.first_training_date},
                     {"last_date", f.last_training_date}};
  }
  if (f.diagnostics) {
    const auto& d = *f.diagnostics;
    j["objective"] = std::string(emos::to_string(d.objective));
    j["diagnostics"] = {{"cases", d.cases},
                        {"iterations", d.iterations},
                        {"evaluations", d.evaluations},
                        {"initial_objective", d.initial_objective},
                        {"final_objective", d.final_objective},
                        {"converged", d.converged},
                        {"message", d.message}};
  }
  return j.dump(2) + "\n";
}

inline CoefficientFile parse_coefficients(std::string_view text) {
  const json j = parse_json(text, "coefficients");
  CoefficientFile f;
  try {
    f.member_names = j.at("member_names").get<std::vector<std::string>>();
    f.coefficients.grouping = grouping_from_json(j.at("grouping"), f.member_names);
    f.coefficients.variance.model = emos::parse_variance_model(j.at("variance_link").get<std::string>());
    f.coefficients.a = j.at("a").get<std::vector<double>>();
    f.coefficients.variance.b = j.at("b").get<std::vector<double>>();
    f.coefficients.shift = j.at("delta").get<double>();
    if (j.contains("diagnostics")) {
      emos::FitDiagnostics d;
      const auto& dj = j.at("diagnostics");
      d.objective = emos::parse_objective(j.at("objective").get<std::string>());
      d.cases = dj.at("cases").get<std::size_t>();
      d.iterations = dj.at("iterations").get<int>();
      d.evaluations = dj.at("evaluations").get<int>();
      d.initial_objective = dj.at("initial_objective").get<double>();
      d.final_objective = dj.at("final_objective").get<double>();
      d.converged = dj.at("converged").get<bool>();
      d.message = dj.at("message").get<std::string>();
      f.diagnostics = d;
    }
    if (j.contains("training")) {
      f.window = j["training"].at("window").get<std::size_t>();
      f.first_training_date = j["training"].at("first_date").get<std::string>();
      f.last_training_date = j["training"].at("last_date").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("coefficients: ") + e.what());
  }
  f.coefficients.validate();
  return f;
}

// ---- scenario ------------------------------------------------------------------

/// `{"preset": "uwme"|"aladin", ...overrides}` or a full specification with a
/// `truth` block (`grouping`, `variance_link`, `a`, `b`, `delta`).
inline sim::ScenarioSpec parse_scenario(std::string_view text) {
  const json j = parse_json(text, "scenario");
  sim::ScenarioSpec s;
  try {
    const std::string preset = j.value("preset", std::string{});
    if (preset == "uwme") s = sim::uwme_preset();
    else if (preset == "aladin") s = sim::aladin_preset();
    else if (!preset.empty()) throw DataError("scenario: unknown preset '" + preset + "'");
    if (j.contains("truth")) {
      const auto& t = j.at("truth");
      const auto m = t.at("members").get<std::size_t>();
      const auto names = sim::member_names(m);
      s.truth.grouping = t.contains("grouping") ? grouping_from_json(t.at("grouping"), names)
                                                : emos::GroupingScheme::singletons(m);
      s.truth.variance.model = emos::parse_variance_model(t.value("variance_link", std::string("mean")));
      s.truth.a = t.at("a").get<std::vector<double>>();
      s.truth.variance.b = t.at("b").get<std::vector<double>>();
      s.truth.shift = t.at("delta").get<double>();
      if (s.member_bias.size() != m) s.member_bias.clear();
      if (s.member_noise.size() != m) s.member_noise.clear();
    } else if (preset.empty()) {
      throw DataError("scenario: needs a preset or a truth block");
    }
    s.stations = j.value("stations", s.stations);
    s.dates = j.value("dates", s.dates);
    if (j.contains("start")) s.start = Date::parse(j.at("start").get<std::string>());
    s.latent_shape = j.value("latent_shape", s.latent_shape);
    s.latent_scale = j.value("latent_scale", s.latent_scale);
    s.noise = j.value("noise", s.noise);
    if (j.contains("member_bias")) s.member_bias = j.at("member_bias").get<std::vector<double>>();
    if (j.contains("member_noise")) s.member_noise = j.at("member_noise").get<std::vector<double>>();
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw DataError(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

// ---- reports ---------------------------------------------------------------------

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json dm_to_json(const verify::DmResult& d) {
  return {{"statistic", number_or_null(d.statistic)},
          {"p_value", number_or_null(d.p_value)},
          {"degenerate", d.degenerate}};
}

inline json report_to_json(const verify::VerificationReport& r) {
  json j;
  j["name"] = r.name;
  j["cases"] = r.cases;
  j["mean_crps"] = r.mean_crps;
  j["mae"] = r.mae;
  json intervals = json::array();
  for (const auto& iv : r.intervals) {
    intervals.push_back({{"level", iv.level}, {"coverage", iv.coverage}, {"average_width", iv.average_width}});
  }
  j["intervals"] = intervals;
  json thresholds = json::array();
  for (const auto& t : r.thresholds) {
    json bins = json::array();
    for (const auto& b : t.reliability.bins) {
      json bj{{"lower", b.lower}, {"upper", b.upper}, {"count", b.count}, {"empty", b.empty}};
      bj["mean_probability"] = b.empty ? json(nullptr) : json(b.mean_probability);
      bj["observed_frequency"] = b.empty ? json(nullptr) : json(b.observed_frequency);
      bj["log10_count"] = b.empty ? json(nullptr) : json(b.log10_count);
      bins.push_back(std::move(bj));
    }
    thresholds.push_back({{"threshold", t.threshold},
                          {"brier", t.brier},
                          {"reliability", {{"event", "observation > threshold"}, {"bins", bins}}},
                          {"per_case_brier", t.per_case}});
  }
  j["thresholds"] = thresholds;
  if (!r.pit.empty()) {
    j["pit"] = r.pit;
    j["pit_ks_p"] = r.pit_ks_p ? json(*r.pit_ks_p) : json(nullptr);
  }
  if (!r.rank_counts.empty()) {
    j["rank_counts"] = r.rank_counts;
    j["rank_chi2_p"] = r.rank_chi2_p ? json(*r.rank_chi2_p) : json(nullptr);
  }
  j["per_case"] = {{"crps", r.crps}, {"abs_error", r.abs_error}};
  return j;
}

inline json comparison_to_json(const verify::Comparison& c) {
  json bss = json::array();
  for (const auto& t : c.bss) bss.push_back({{"threshold", t.threshold}, {"bss", number_or_null(t.bss)}});
  return {{"method", c.method},
          {"reference", c.reference},
          {"crpss", number_or_null(c.crpss)},
          {"bss", bss},
          {"dm_crps", dm_to_json(c.dm_crps)},
          {"dm_mae", dm_to_json(c.dm_mae)}};
}

struct ReportCase {
  std::string date;
  std::string station;
  double observation = 0.0;
};

struct ReportDocument {
  json run;  // free-form run settings (window, seed, ...)
  std::vector<ReportCase> cases;
  std::vector<verify::VerificationReport> reports;
  std::vector<verify::Comparison> comparisons;
};

inline std::string write_report(const ReportDocument& doc) {
  json j;
  j["format"] = "csgemos-report";
  j["version"] = 1;
  j["run"] = doc.run;
  json dates = json::array(), stations = json::array(), obs = json::array();
  for (const auto& c : doc.cases) {
    dates.push_back(c.date);
    stations.push_back(c.station);
    obs.push_back(c.observation);
  }
  j["cases"] = {{"date", dates}, {"station", stations}, {"observation", obs}};
  json reports = json::array();
  for (const auto& r : doc.reports) reports.push_back(report_to_json(r));
  j["reports"] = reports;
  json comps = json::array();
  for (const auto& c : doc.comparisons) comps.push_back(comparison_to_json(c));
  j["comparisons"] = comps;
  return j.dump(1) + "\n";
}

inline std::string write_tuning_table(std::span<const emos::TuningRow> rows) {
  std::string out = "n,mean_crps,mae\n";
  for (const auto& r : rows) {
    out += std::to_string(r.window) + "," + format_number(r.mean_crps) + "," + format_number(r.mae) + "\n";
  }
  return out;
}

}  // namespace csgemos::io
