#include "catch_amalgamated.hpp"

#include <filesystem>
#include <sstream>

#include "csgemos/cli.hpp"

using namespace csgemos;
namespace fs = std::filesystem;

namespace {

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() / ("csgemos_cli_" + std::to_string(Catch::rngSeed()) + "_" +
                                       std::to_string(counter()++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("usage errors", "[cli]") {
  CHECK(run({}).code == cli::Usage);
  CHECK(run({"frobnicate"}).code == cli::Usage);
  CHECK(run({"fit", "--data", "/nonexistent.csv", "--out", "x.json"}).code == cli::Usage);
  CHECK(run({"simulate", "--preset", "uwme", "--out", "x.csv"}).code == cli::Usage);  // no seed
  CHECK(run({"simulate", "--preset", "mars", "--seed", "1", "--out", "x.csv"}).code == cli::Usage);
  const auto help = run({"--help"});
  CHECK(help.code == cli::Success);
  CHECK_THAT(help.out, Catch::Matchers::ContainsSubstring("tune-window"));
  const auto vhelp = run({"verify", "--help"});
  for (const char* flag : {"--window", "--objective", "--variance-link", "--thresholds", "--levels",
                           "--seed", "--policy", "--init"}) {
    CHECK_THAT(vhelp.out, Catch::Matchers::ContainsSubstring(flag));
  }
}

TEST_CASE("fit with a window longer than the dataset", "[cli]") {
  Sandbox sb;
  REQUIRE(run({"simulate", "--preset", "aladin", "--dates", "20", "--seed", "4", "--out", sb / "d.csv"}).code == 0);
  const auto r = run({"fit", "--data", sb / "d.csv", "--window", "30", "--out", sb / "c.json"});
  CHECK(r.code == cli::Data);
  CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("window too long"));
  CHECK_FALSE(fs::exists(sb / "c.json"));
}

TEST_CASE("simulate, fit, predict", "[cli]") {
  Sandbox sb;
  REQUIRE(run({"simulate", "--preset", "aladin", "--stations", "10", "--dates", "30", "--seed", "5",
               "--out", sb / "d.csv", "--grouping-out", sb / "g.json"})
              .code == 0);
  const auto fit = run({"fit", "--data", sb / "d.csv", "--grouping", sb / "g.json", "--window", "20",
                        "--out", sb / "c.json"});
  REQUIRE(fit.code == 0);
  const auto coef = io::parse_coefficients(io::read_file(sb / "c.json"));
  CHECK(coef.coefficients.grouping.group_count() == 2);
  CHECK(coef.diagnostics->cases == 200);
  CHECK(*coef.window == 20);

  REQUIRE(run({"predict", "--data", sb / "d.csv", "--coefficients", sb / "c.json", "--levels",
               "0.5,0.8333", "--out", sb / "p.csv"})
              .code == 0);
  const auto pred = io::read_file(sb / "p.csv");
  CHECK(pred.rfind("date,station,shape,scale,shift,point_mass,mean,median,lower_0.5,upper_0.5,"
                   "lower_0.8333,upper_0.8333\n",
                   0) == 0);
  CHECK(std::count(pred.begin(), pred.end(), '\n') == 301);
}

TEST_CASE("verify is byte-reproducible and calibrated", "[cli][slow]") {
  Sandbox sb;
  REQUIRE(run({"simulate", "--preset", "uwme", "--stations", "20", "--dates", "45", "--seed", "9",
               "--out", sb / "d.csv"})
              .code == 0);
  const std::vector<std::string> verify{"verify", "--data", sb / "d.csv", "--window", "25",
                                        "--seed", "11", "--out", sb / "r1.json"};
  REQUIRE(run(verify).code == 0);
  auto again = verify;
  again.back() = sb / "r2.json";
  REQUIRE(run(again).code == 0);
  CHECK(io::read_file(sb / "r1.json") == io::read_file(sb / "r2.json"));

  const auto j = io::json::parse(io::read_file(sb / "r1.json"));
  const auto& csg = j["reports"][0];
  CHECK(csg["name"] == "csg_emos");
  CHECK(csg["cases"] == 400);
  const double level = csg["intervals"][0]["level"].get<double>();
  CHECK_THAT(level, Catch::Matchers::WithinRel(7.0 / 9.0, 1e-15));
  const double coverage = csg["intervals"][0]["coverage"].get<double>();
  CHECK(std::abs(coverage - level) <= 3.0 * std::sqrt(level * (1 - level) / 400.0) + 0.02);
  CHECK(j["reports"][1]["rank_counts"].size() == 9);
  CHECK(j["comparisons"][0]["crpss"].get<double>() > 0.0);
}

TEST_CASE("tune-window over the default grid", "[cli][slow]") {
  Sandbox sb;
  REQUIRE(run({"simulate", "--preset", "aladin", "--stations", "2", "--dates", "105", "--seed", "3",
               "--out", sb / "d.csv"})
              .code == 0);
  const auto r = run({"tune-window", "--data", sb / "d.csv", "--grid", "20:100:5", "--min-cases", "1",
                      "--out", sb / "t.csv"});
  REQUIRE(r.code == 0);
  const auto table = io::read_file(sb / "t.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 18);
  CHECK(table.rfind("n,mean_crps,mae\n20,", 0) == 0);
  CHECK(run({"tune-window", "--data", sb / "d.csv", "--grid", "20:x:5", "--out", sb / "t.csv"}).code ==
        cli::Usage);
}

TEST_CASE("missing-data policy flag", "[cli]") {
  Sandbox sb;
  io::write_file_atomic(sb / "d.csv",
                        "date,station,obs,m1,m2\n"
                        "2008-01-01,A,0,1,2\n2008-01-01,B,0,NA,2\n"
                        "2008-01-02,A,0,1,2\n2008-01-02,B,1,1,2\n");
  const auto dd = run({"fit", "--data", sb / "d.csv", "--window", "1", "--min-cases", "1", "--out", sb / "c.json"});
  CHECK(dd.code == 0);
  CHECK_THAT(dd.err, Catch::Matchers::ContainsSubstring("excluded 2 of 4 rows on 1 dates"));
  const auto rd = run({"fit", "--data", sb / "d.csv", "--policy", "row-drop", "--window", "2",
                       "--min-cases", "1", "--out", sb / "c.json"});
  CHECK(rd.code == 0);
  CHECK_THAT(rd.err, Catch::Matchers::ContainsSubstring("excluded 1 of 4 rows"));
  CHECK(io::parse_coefficients(io::read_file(sb / "c.json")).diagnostics->cases == 3);
}
