#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "fesloop/errors.hpp"
#include "fesloop_cli/cli.hpp"

using namespace fesloop;
using namespace fesloop::cli;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"fesloop"};
  storage.insert(storage.end(), args);
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::current_path() / "cli_scratch" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("default config covers the 18-recording grid") {
  const RunConfig cfg;
  const auto cells = cfg.scenarios();
  CHECK(cells.size() == 18);
  CHECK(cfg.session_for(plant::Condition::FesOff).duration_s == 60.0);
  CHECK(cfg.session_for(plant::Condition::FesCl).duration_s == 180.0);
  // Conditions at one speed and incline share the walker realization.
  CHECK(cells[0].seed == cells[1].seed);
  CHECK(cells[0].seed != cells[3].seed);
}

TEST_CASE("config JSON round trip and strictness") {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.cells = {"1.2_5_FES_FD"};
  cfg.plant.noise.sd_override_mm = 3.0;
  const auto back = RunConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());

  auto code = [](const nlohmann::json& j) {
    try {
      RunConfig::from_json(j);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  CHECK(code({{"sead", 1}}) == ErrorCode::ConfigError);
  CHECK(code({{"grid", {{"speeds", nlohmann::json::array()}}}}) == ErrorCode::ConfigError);
  CHECK(code({{"cells", {"9.9_0_FES_OFF"}}}) == ErrorCode::ConfigError);
  CHECK(code({{"plant", {{"legs", {{"right", {{"ta", {{"true_threshold_us", 700.0}}}}}}}}}}) == ErrorCode::ConfigError);
}

TEST_CASE("overrides") {
  RunConfig cfg;
  apply(cfg, {7, fs::path("elsewhere"), std::string("0.7_0_FES_OFF,0.7_0_FES_CL"), 12.0, 3u});
  CHECK(cfg.seed == 7);
  CHECK(cfg.output_dir == "elsewhere");
  CHECK(cfg.scenarios().size() == 2);
  CHECK(cfg.duration_off_s == 12.0);
  CHECK(cfg.duration_stim_s == 12.0);
  CHECK(cfg.workers == 3);
}

TEST_CASE("calibrate writes identification results on the 50 us grid") {
  const auto dir = scratch("calibrate");
  const auto r = run({"calibrate", "--out-dir", dir.string()});
  REQUIRE(r.code == kExitOk);
  const auto j = read_json(dir / "calibration.json");
  for (const char* leg : {"right", "left"}) {
    for (const char* muscle : {"ta", "gs"}) {
      for (const char* key : {"u_thr_us", "u_max_us"}) {
        const double v = j["legs"][leg][muscle][key].get<double>();
        CHECK(std::fmod(v, 50.0) == 0.0);
      }
    }
  }
  CHECK(j["legs"]["right"]["ta"]["u_thr_us"] == 150.0);
  CHECK(j["legs"]["right"]["gs"]["u_thr_us"] == 200.0);
}

TEST_CASE("corrupted plant config exits with code 2") {
  const auto dir = scratch("corrupt");
  write_text(dir / "bad.json", R"({"plant": {"legs": {"left": {"gs": {"act_tau_s": -1}}}}})");
  const auto r = run({"calibrate", "--config", (dir / "bad.json").string(), "--out-dir", dir.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("error") != std::string::npos);

  write_text(dir / "garbage.json", "{ not json");
  CHECK(run({"run", "--config", (dir / "garbage.json").string()}).code == kExitConfig);
  CHECK(run({"bogus"}).code == kExitConfig);
}

TEST_CASE("run without calibration fails for stimulated cells") {
  const auto dir = scratch("nocalib");
  const auto r = run({"run", "--out-dir", dir.string(), "--cells", "0.7_0_FES_FD", "--duration", "5"});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("calibration") != std::string::npos);
}

TEST_CASE("analyze without traces fails") {
  const auto dir = scratch("notraces");
  CHECK(run({"analyze", "--out-dir", dir.string(), "--cells", "0.7_0_FES_OFF"}).code == kExitConfig);
}

TEST_CASE("one-cell run produces exactly one output set") {
  const auto dir = scratch("onecell");
  REQUIRE(run({"calibrate", "--out-dir", dir.string()}).code == kExitOk);
  const auto r = run({"run", "--out-dir", dir.string(), "--cells", "1.2_0_FES_CL", "--duration", "20"});
  REQUIRE(r.code == kExitOk);
  std::vector<fs::path> cells;
  for (const auto& e : fs::directory_iterator(dir / "cells")) cells.push_back(e.path());
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].filename() == "1.2_0_FES_CL");
  for (const char* f : {"trace.csv", "stim.csv", "cycles.csv", "cell.json"}) CHECK(fs::exists(cells[0] / f));
}

TEST_CASE("FES_OFF-only analysis marks charge as not applicable") {
  const auto dir = scratch("offonly");
  const auto r = run({"all", "--out-dir", dir.string(), "--cells", "0.7_5_FES_OFF", "--duration", "30"});
  REQUIRE(r.code == kExitOk);
  const auto j = read_json(dir / "summary.json");
  REQUIRE(j["groups"].size() == 1);
  const auto& charge = j["groups"][0]["charge"];
  CHECK(charge["applicable"] == false);
  CHECK(charge["reason"].get<std::string>().find("not applicable") != std::string::npos);
  CHECK(fs::exists(dir / "figures" / "clearance_curves.csv"));
}

TEST_CASE("too few cycles is reported per cell and exits with code 1") {
  const auto dir = scratch("short");
  const auto r = run({"all", "--out-dir", dir.string(), "--cells", "0.7_0_FES_OFF,1.2_0_FES_OFF", "--duration", "1.5"});
  CHECK(r.code == kExitAnalysis);
  const auto j = read_json(dir / "summary.json");
  REQUIRE(j["groups"].size() == 2);
  for (const auto& g : j["groups"]) CHECK_FALSE(g["errors"].empty());
  CHECK_FALSE(j["errors"].empty());
}

TEST_CASE("reruns are byte-identical and independent of the worker count") {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const std::string cells = "0.7_-5_FES_OFF,0.7_-5_FES_FD,0.7_-5_FES_CL";
  REQUIRE(run({"all", "--out-dir", a.string(), "--cells", cells, "--duration", "25", "--workers", "1"}).code ==
          kExitOk);
  REQUIRE(run({"all", "--out-dir", b.string(), "--cells", cells, "--duration", "25", "--workers", "3"}).code ==
          kExitOk);
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  for (const char* cell : {"0.7_-5_FES_OFF", "0.7_-5_FES_FD", "0.7_-5_FES_CL"}) {
    for (const char* f : {"trace.csv", "stim.csv", "cycles.csv"}) {
      CHECK(slurp(a / "cells" / cell / f) == slurp(b / "cells" / cell / f));
    }
  }

  const auto c = scratch("det_c");
  REQUIRE(run({"all", "--out-dir", c.string(), "--cells", cells, "--duration", "25", "--seed", "2"}).code == kExitOk);
  CHECK(slurp(a / "summary.json") != slurp(c / "summary.json"));
}
