#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "fesloop/plant.hpp"
#include "fesloop/report.hpp"
#include "fesloop/session.hpp"

namespace fesloop::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAnalysis = 1;
inline constexpr int kExitConfig = 2;

struct RunConfig {
  std::vector<double> speeds{0.7, 1.2};
  std::vector<double> inclines{-5.0, 0.0, 5.0};
  std::vector<plant::Condition> conditions{plant::Condition::FesOff, plant::Condition::FesFd,
                                           plant::Condition::FesCl};
  double stim_probability = 0.25;
  double duration_off_s = 60.0;
  double duration_stim_s = 180.0;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  std::vector<std::string> cells;  // restricts the grid to these cell ids when non-empty
  controllers::ControllerConfig controller;
  plant::PlantConfig plant;
  report::AnalysisConfig analysis;
  std::filesystem::path output_dir = "fesloop_out";

  /// Throws ConfigError on an empty grid, unknown keys or invalid values.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  /// Grid cells in deterministic order (speed, incline, condition), after the
  /// `cells` filter. Cells at the same speed and incline share a seed derived
  /// from the master seed, so their conditions are matched.
  std::vector<plant::Scenario> scenarios() const;
  session::SessionConfig session_for(plant::Condition condition) const;
  bool stimulates_any() const;
};

/// Reads a JSON config; a missing path yields the defaults.
RunConfig load_config(const std::optional<std::filesystem::path>& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::string> cells;  // comma separated
  std::optional<double> duration_s;
  std::optional<unsigned> workers;
};

void apply(RunConfig& config, const Overrides& o);

std::filesystem::path calibration_path(const RunConfig& config);
std::filesystem::path cell_dir(const RunConfig& config, const plant::Scenario& scenario);

session::Calibration cmd_calibrate(const RunConfig& config, std::ostream& log);
std::vector<session::CellRecording> cmd_run(const RunConfig& config, std::ostream& log,
                                            const std::optional<session::Calibration>& calib = std::nullopt);
/// Returns the exit code: analysis errors (e.g. too few cycles in a cell) give 1.
int cmd_analyze(const RunConfig& config, std::ostream& log,
                const std::vector<session::CellRecording>* recorded = nullptr);
int cmd_all(const RunConfig& config, std::ostream& log);

/// Entry point shared by the executable and the tests.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fesloop::cli
