#pragma once

#include <array>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "fesloop/controllers.hpp"
#include "fesloop/gait_state.hpp"
#include "fesloop/geometry.hpp"
#include "fesloop/plant.hpp"

namespace fesloop::session {

struct LegCalibration {
  controllers::MuscleCalib ta;
  controllers::MuscleCalib gs;
  double foot_drop_peak_us = 0.0;
  double foot_drop_force_n = 0.0;
  double ground_offset_mm = 0.0;
};

/// Result of the identification protocol for all four muscles plus the
/// static ground-plane offset of each shoe.
struct Calibration {
  std::array<LegCalibration, 2> legs{};  // indexed by Leg

  const LegCalibration& leg(Leg l) const { return legs[static_cast<std::size_t>(l)]; }
  void validate() const;
};

/// Identifies TA and GS of both legs against the plant's isometric probe and
/// escalates the GS foot-drop peak to 10 N. Errors carry the muscle label.
Calibration calibrate(const plant::PlantConfig& plant, const controllers::IdentificationConfig& id = {},
                      const geometry::SoleCloud& cloud = geometry::make_default_sole_cloud());

nlohmann::json to_json(const Calibration& calib);
/// Throws InvalidCalib on missing fields or values that fail validation.
Calibration calibration_from_json(const nlohmann::json& j);

struct SessionConfig {
  controllers::ControllerConfig controller;
  gait_state::DetectorConfig detector;
  double duration_s = 180.0;
  double foot_drop_initial_window_s = 0.8;  // mid-stance to heel strike

  void validate() const;
};

enum class TaMode { Off, OpenLoop, ClosedLoop };

/// FES_OL drives open-loop TA on both legs; FES_CL runs the closed loop on
/// the right leg and the open loop on the left.
TaMode ta_mode(plant::Condition condition, Leg leg);
bool foot_drop_enabled(plant::Condition condition);

struct TraceSample {
  double t = 0.0;
  gait_state::PhaseKind phase = gait_state::PhaseKind::Stance;  // as seen by the controller
  double cycle_fraction = 0.0;                                   // plant ground truth
  double clearance_mm = 0.0;                                     // measured from markers
  double true_clearance_mm = 0.0;
  double a_ta = 0.0;
  double a_gs = 0.0;
  double stim_ta_us = 0.0;
  double stim_gs_us = 0.0;
  double gs_force_n = 0.0;
  bool stim_cycle = false;  // gate latched for the current cycle
};

struct CycleRecord {
  gait_state::CycleIndex index;
  double t_start = 0.0;
  double t_toe_off = 0.0;
  double t_end = 0.0;
  bool stim_cycle = false;
};

/// Command issued at `t`; it holds until the next entry of the same channel.
struct StimSample {
  double t = 0.0;
  double pulse_width_us = 0.0;
};

struct LegRecording {
  std::vector<TraceSample> trace;
  std::vector<CycleRecord> cycles;
  std::string cycle_error;  // set when segmentation failed
  std::vector<StimSample> ta_log;
  std::vector<StimSample> gs_log;
};

struct CellRecording {
  plant::Scenario scenario;
  double duration_s = 0.0;
  double dt = 0.01;
  double amplitude_ma = controllers::kAmplitudeMa;
  double frequency_hz = controllers::kFrequencyHz;
  Calibration calibration;
  std::array<LegRecording, 2> legs{};

  const LegRecording& leg(Leg l) const { return legs[static_cast<std::size_t>(l)]; }
};

/// Runs one scenario cell in closed loop: plant -> markers -> clearance and
/// phase estimation -> controllers -> plant, at the controller rate.
CellRecording simulate_cell(const plant::Scenario& scenario, const Calibration& calib, const SessionConfig& config,
                            const geometry::SoleCloud& cloud = geometry::make_default_sole_cloud());

/// Writes trace.csv, stim.csv, cycles.csv and cell.json into `dir`.
void write_cell(const CellRecording& cell, const std::filesystem::path& dir);
/// Throws MissingTraces when any of the four files is absent.
CellRecording read_cell(const std::filesystem::path& dir);

}  // namespace fesloop::session
