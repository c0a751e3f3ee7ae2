#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "fesloop/errors.hpp"
#include "fesloop/session.hpp"

using namespace fesloop;
using namespace fesloop::session;
using gait_state::PhaseKind;
using plant::Condition;

namespace {

const Calibration& default_calibration() {
  static const Calibration c = calibrate(plant::PlantConfig{});
  return c;
}

SessionConfig short_session(double seconds) {
  SessionConfig cfg;
  cfg.duration_s = seconds;
  return cfg;
}

std::string first_line(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

}  // namespace

TEST_CASE("calibrate: four muscles on the 50 us grid, within one step of truth") {
  const plant::PlantConfig plant;
  const auto& calib = default_calibration();
  for (Leg leg : {Leg::Right, Leg::Left}) {
    const auto& lc = calib.leg(leg);
    const auto& m = plant.muscles(leg);
    for (const auto& [mc, model] : {std::pair{lc.ta, m.ta}, std::pair{lc.gs, m.gs}}) {
      CHECK(mc.on_identification_grid());
      CHECK(mc.u_thr > model.true_threshold_us);
      CHECK(mc.u_thr <= model.true_threshold_us + 50.0);
      CHECK(std::abs(mc.u_max - model.true_saturation_us) <= 50.0);
    }
    CHECK(lc.foot_drop_peak_us == lc.gs.u_thr + 50.0);
    CHECK(lc.foot_drop_force_n >= 10.0);
    CHECK(lc.foot_drop_force_n <= 15.0);
    CHECK(std::abs(lc.ground_offset_mm) < 1e-6);
  }
}

TEST_CASE("calibration JSON round trip and validation") {
  const auto& calib = default_calibration();
  const auto back = calibration_from_json(to_json(calib));
  CHECK(to_json(back) == to_json(calib));

  auto broken = to_json(calib);
  broken["legs"]["left"]["gs"]["u_max_us"] = 10.0;
  try {
    calibration_from_json(broken);
    FAIL("expected InvalidCalib");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidCalib);
  }
}

TEST_CASE("calibrate: errors carry the muscle label") {
  plant::PlantConfig plant;
  plant.legs[1].gs.true_threshold_us = 990.0;
  plant.legs[1].gs.true_saturation_us = 2000.0;
  plant.legs[1].gs.max_force_n = 0.01;
  try {
    calibrate(plant);
    FAIL("expected NoThresholdFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoThresholdFound);
    CHECK(std::string(e.what()).find("left GS") != std::string::npos);
  }
}

TEST_CASE("TA mode per condition and leg") {
  CHECK(ta_mode(Condition::FesCl, Leg::Right) == TaMode::ClosedLoop);
  CHECK(ta_mode(Condition::FesCl, Leg::Left) == TaMode::OpenLoop);
  CHECK(ta_mode(Condition::FesOl, Leg::Right) == TaMode::OpenLoop);
  CHECK(ta_mode(Condition::FesFd, Leg::Right) == TaMode::Off);
  CHECK(foot_drop_enabled(Condition::FesCl));
  CHECK_FALSE(foot_drop_enabled(Condition::FesOff));
}

TEST_CASE("probability zero degenerates to the unstimulated walk") {
  // Noise SD depends on the condition, so the exact comparison runs without noise.
  plant::PlantConfig quiet;
  quiet.noise.enabled = false;
  const auto cfg = short_session(20.0);
  const auto& calib = default_calibration();
  const auto off = simulate_cell(plant::make_scenario(0.7, 0.0, Condition::FesOff, 0.0, 4, quiet), calib, cfg);
  for (Condition c : {Condition::FesFd, Condition::FesOl, Condition::FesCl}) {
    const auto cell = simulate_cell(plant::make_scenario(0.7, 0.0, c, 0.0, 4, quiet), calib, cfg);
    for (Leg leg : {Leg::Right, Leg::Left}) {
      const auto& a = off.leg(leg).trace;
      const auto& b = cell.leg(leg).trace;
      REQUIRE(a.size() == b.size());
      for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(b[k].stim_ta_us == 0.0);
        CHECK(b[k].stim_gs_us == 0.0);
        CHECK(a[k].true_clearance_mm == b[k].true_clearance_mm);
      }
    }
  }
}

TEST_CASE("closed-loop cell: saturation, gating and the rate limit on every step") {
  const auto scenario = plant::make_scenario(0.7, -5.0, Condition::FesCl, 0.25, 11);
  const auto cell = simulate_cell(scenario, default_calibration(), short_session(90.0));
  const auto& ta = cell.calibration.leg(Leg::Right).ta;
  const auto& trace = cell.leg(Leg::Right).trace;
  bool reached_max = false;
  double prev = 0.0;
  bool prev_active = false;
  std::size_t active = 0;
  for (const auto& s : trace) {
    const bool on = s.phase == PhaseKind::Swing && s.stim_cycle;
    if (on) {
      CHECK(s.stim_ta_us >= ta.u_thr);
      CHECK(s.stim_ta_us <= ta.u_max);
      if (prev_active) CHECK(std::abs(s.stim_ta_us - prev) <= 50.0 + 1e-9);
      reached_max = reached_max || s.stim_ta_us == ta.u_max;
      ++active;
    } else {
      CHECK(s.stim_ta_us == 0.0);
    }
    prev = s.stim_ta_us;
    prev_active = on;
  }
  CHECK(active > 0);
  // Foot drop pulls the toe under c_min in at least one stimulated swing.
  CHECK(reached_max);
  CHECK(cell.leg(Leg::Right).cycles.size() > 50);
}

TEST_CASE("write_cell / read_cell round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "fesloop_session_test";
  std::filesystem::remove_all(dir);
  const auto scenario = plant::make_scenario(1.2, 5.0, Condition::FesCl, 0.25, 2);
  const auto cell = simulate_cell(scenario, default_calibration(), short_session(8.0));
  write_cell(cell, dir);

  CHECK(first_line(dir / "trace.csv").starts_with("t_s,phase,clearance_mm,a_ta,a_gs,stim_ta_us,stim_gs_us,gs_force_n"));
  CHECK(first_line(dir / "stim.csv") == "t_s,leg,muscle,pulse_width_us,amplitude_ma,frequency_hz");
  CHECK(first_line(dir / "cycles.csv").starts_with("leg,cycle,start_s,toe_off_s,end_s"));

  const auto back = read_cell(dir);
  CHECK(back.scenario.cell_id() == scenario.cell_id());
  CHECK(back.scenario.seed == scenario.seed);
  for (Leg leg : {Leg::Right, Leg::Left}) {
    const auto& a = cell.leg(leg);
    const auto& b = back.leg(leg);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t k = 0; k < a.trace.size(); ++k) {
      CHECK(a.trace[k].t == b.trace[k].t);
      CHECK(a.trace[k].clearance_mm == b.trace[k].clearance_mm);
      CHECK(a.trace[k].stim_ta_us == b.trace[k].stim_ta_us);
      CHECK(a.trace[k].phase == b.trace[k].phase);
      CHECK(a.trace[k].stim_cycle == b.trace[k].stim_cycle);
    }
    REQUIRE(a.cycles.size() == b.cycles.size());
    for (std::size_t c = 0; c < a.cycles.size(); ++c) {
      CHECK(a.cycles[c].index.end_sample == b.cycles[c].index.end_sample);
      CHECK(a.cycles[c].t_toe_off == b.cycles[c].t_toe_off);
    }
    REQUIRE(a.ta_log.size() == b.ta_log.size());
    CHECK(a.gs_log.back().pulse_width_us == b.gs_log.back().pulse_width_us);
  }
  CHECK(to_json(back.calibration) == to_json(cell.calibration));

  std::filesystem::remove(dir / "stim.csv");
  try {
    read_cell(dir);
    FAIL("expected MissingTraces");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingTraces);
  }
  std::filesystem::remove_all(dir);
}
