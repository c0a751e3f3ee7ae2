#include "fesloop/session.hpp"

#include <cmath>
#include <fstream>

#include "fesloop/csv.hpp"
#include "fesloop/errors.hpp"

namespace fesloop::session {

namespace {

using gait_state::PhaseKind;
using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::array<Leg, 2> kLegs{Leg::Right, Leg::Left};

std::size_t idx(Leg leg) { return static_cast<std::size_t>(leg); }

controllers::MuscleCalib identify_labelled(const plant::MuscleModel& m, const controllers::IdentificationConfig& id,
                                           const std::string& label) {
  try {
    return controllers::identify_calibration(plant::isometric_probe(m), id);
  } catch (const Error& e) {
    throw Error(e.code(), label + ": " + e.what());
  }
}

json calib_json(const controllers::MuscleCalib& c) { return {{"u_thr_us", c.u_thr}, {"u_max_us", c.u_max}}; }

controllers::MuscleCalib calib_from(const json& j) {
  return {j.at("u_thr_us").get<double>(), j.at("u_max_us").get<double>()};
}

std::string_view phase_name(PhaseKind k) { return k == PhaseKind::Swing ? "swing" : "stance"; }

PhaseKind parse_phase(const std::string& s) {
  if (s == "swing") return PhaseKind::Swing;
  if (s == "stance") return PhaseKind::Stance;
  throw Error(ErrorCode::IoError, "unknown phase '" + s + "'");
}

Leg parse_leg(const std::string& s) {
  if (s == "right") return Leg::Right;
  if (s == "left") return Leg::Left;
  throw Error(ErrorCode::IoError, "unknown leg '" + s + "'");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

// Per-leg control stack.
struct LegStack {
  gait_state::PhaseDetector detector;
  controllers::ClosedLoopController closed;
  controllers::OpenLoopChannel ta_open;
  controllers::OpenLoopChannel gs_drop;
  geometry::GroundPlane plane;
  TaMode mode;
  double last_clearance = 0.0;
  std::size_t swings = 0;
  bool cycle_gate = false;
};

}  // namespace

void Calibration::validate() const {
  for (const auto& l : legs) {
    l.ta.validate();
    l.gs.validate();
    if (!(l.foot_drop_peak_us >= l.gs.u_thr && l.foot_drop_peak_us <= l.gs.u_max)) {
      throw Error(ErrorCode::InvalidCalib, "foot-drop peak must lie in [u_thr, u_max] of GS");
    }
    if (!std::isfinite(l.ground_offset_mm)) throw Error(ErrorCode::InvalidCalib, "ground offset must be finite");
  }
}

Calibration calibrate(const plant::PlantConfig& plant, const controllers::IdentificationConfig& id,
                      const geometry::SoleCloud& cloud) {
  plant.validate();
  Calibration out;
  const auto frames = plant::static_calibration_frames(cloud, 0.0);
  for (Leg leg : kLegs) {
    const auto& muscles = plant.muscles(leg);
    const std::string side(to_string(leg));
    LegCalibration& lc = out.legs[idx(leg)];
    lc.ta = identify_labelled(muscles.ta, id, side + " TA");
    lc.gs = identify_labelled(muscles.gs, id, side + " GS");
    const auto tuning = controllers::tune_foot_drop_peak(lc.gs, plant::isometric_probe(muscles.gs), {}, 10.0, id.step_us);
    lc.foot_drop_peak_us = tuning.profile.peak;
    lc.foot_drop_force_n = tuning.force_n;
    lc.ground_offset_mm = geometry::ground_plane_from_calibration(frames, cloud, 0.0, leg).height_offset;
  }
  return out;
}

json to_json(const Calibration& calib) {
  json legs = json::object();
  for (Leg leg : kLegs) {
    const auto& l = calib.leg(leg);
    legs[std::string(to_string(leg))] = {{"ta", calib_json(l.ta)},
                                         {"gs", calib_json(l.gs)},
                                         {"foot_drop_peak_us", l.foot_drop_peak_us},
                                         {"foot_drop_force_n", l.foot_drop_force_n},
                                         {"ground_offset_mm", l.ground_offset_mm}};
  }
  return {{"legs", legs}};
}

Calibration calibration_from_json(const json& j) {
  Calibration out;
  try {
    for (Leg leg : kLegs) {
      const json& l = j.at("legs").at(std::string(to_string(leg)));
      LegCalibration& lc = out.legs[idx(leg)];
      lc.ta = calib_from(l.at("ta"));
      lc.gs = calib_from(l.at("gs"));
      lc.foot_drop_peak_us = l.at("foot_drop_peak_us").get<double>();
      lc.foot_drop_force_n = l.value("foot_drop_force_n", 0.0);
      lc.ground_offset_mm = l.value("ground_offset_mm", 0.0);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidCalib, std::string("malformed calibration: ") + e.what());
  }
  out.validate();
  return out;
}

void SessionConfig::validate() const {
  controller.validate();
  if (!(duration_s > 0.0)) throw Error(ErrorCode::ConfigError, "duration_s must be positive");
  if (!(foot_drop_initial_window_s > 0.0)) throw Error(ErrorCode::ConfigError, "foot-drop window must be positive");
}

TaMode ta_mode(plant::Condition condition, Leg leg) {
  switch (condition) {
    case plant::Condition::FesOff:
    case plant::Condition::FesFd: return TaMode::Off;
    case plant::Condition::FesOl: return TaMode::OpenLoop;
    case plant::Condition::FesCl: return leg == Leg::Right ? TaMode::ClosedLoop : TaMode::OpenLoop;
  }
  return TaMode::Off;
}

bool foot_drop_enabled(plant::Condition condition) { return plant::stimulates(condition); }

CellRecording simulate_cell(const plant::Scenario& scenario, const Calibration& calib, const SessionConfig& config,
                            const geometry::SoleCloud& cloud) {
  scenario.validate();
  calib.validate();
  config.validate();

  const double dt = config.controller.dt;
  const auto steps = static_cast<std::size_t>(std::llround(config.duration_s / dt));
  const bool stimulated = plant::stimulates(scenario.condition);

  CellRecording rec;
  rec.scenario = scenario;
  rec.duration_s = config.duration_s;
  rec.dt = dt;
  rec.amplitude_ma = config.controller.amplitude_ma;
  rec.frequency_hz = config.controller.frequency_hz;
  rec.calibration = calib;

  plant::Walker walker(scenario, cloud);
  plant::GateSequence gates(scenario.seed, scenario.stim_probability);

  std::vector<LegStack> stacks;
  for (Leg leg : kLegs) {
    const auto& lc = calib.leg(leg);
    stacks.push_back(LegStack{
        gait_state::PhaseDetector(scenario.speed_mps, config.detector),
        controllers::ClosedLoopController(config.controller, lc.ta),
        controllers::OpenLoopChannel({controllers::ta_peak_from_calib(lc.ta), config.controller.fractions},
                                     config.controller.rate_limit_us, config.detector.initial_swing_duration_s),
        controllers::OpenLoopChannel({lc.foot_drop_peak_us, config.controller.fractions},
                                     config.controller.rate_limit_us, config.foot_drop_initial_window_s),
        geometry::GroundPlane{scenario.incline_deg, lc.ground_offset_mm},
        ta_mode(scenario.condition, leg),
    });
    stacks.back().cycle_gate = stimulated && gates.fires(0);
    rec.legs[idx(leg)].trace.reserve(steps);
  }

  const std::string pp2(marker_label::kPP2);
  std::array<plant::StimInput, 2> stim{};
  for (std::size_t k = 0; k < steps; ++k) {
    const plant::PlantOutput out = walker.step(stim, dt);
    const auto lasi = out.frame.get(marker_label::kLeftAsis);
    const auto rasi = out.frame.get(marker_label::kRightAsis);
    for (Leg leg : kLegs) {
      const std::size_t i = idx(leg);
      LegStack& s = stacks[i];
      LegRecording& lr = rec.legs[i];

      if (auto c = geometry::measure_clearance(cloud, out.frame.shoe_markers(leg), s.plane)) {
        s.last_clearance = c->value;
      }
      const auto toe = out.frame.get(leg_prefix(leg) + pp2);
      std::optional<bool> posterior;
      if (toe && lasi && rasi) posterior = gait_state::detect_mid_stance(toe, lasi, rasi);
      const gait_state::GaitPhase phase = s.detector.update(out.frame.t, toe ? toe->x() : 0.0, posterior);
      if (s.detector.swing_started()) ++s.swings;
      if (s.detector.stance_started()) s.cycle_gate = stimulated && gates.fires(s.swings);

      double ta = 0.0;
      switch (s.mode) {
        case TaMode::Off: break;
        case TaMode::OpenLoop: ta = s.ta_open.step(phase.swing(), s.cycle_gate, dt).pulse_width_us; break;
        case TaMode::ClosedLoop: {
          gait_state::GaitPhase gated = phase;
          if (!s.cycle_gate) gated.kind = PhaseKind::Stance;
          ta = s.closed.step(s.last_clearance, gated).pulse_width_us;
          break;
        }
      }
      double gs = 0.0;
      if (foot_drop_enabled(scenario.condition)) {
        const bool window = phase.swing() || phase.mid_stance_reached;
        gs = s.gs_drop.step(window, s.cycle_gate, dt).pulse_width_us;
      }
      stim[i] = {ta, gs};

      const plant::LegTruth& truth = out.legs[i];
      lr.trace.push_back({out.frame.t, phase.kind, truth.phase, s.last_clearance, truth.clearance_mm, truth.a_ta,
                          truth.a_gs, ta, gs, truth.gs_force_n, s.cycle_gate});
      lr.ta_log.push_back({out.frame.t, ta});
      lr.gs_log.push_back({out.frame.t, gs});
    }
  }

  for (Leg leg : kLegs) {
    LegRecording& lr = rec.legs[idx(leg)];
    const auto phases = stacks[idx(leg)].detector.localized_phases();
    try {
      for (const auto& c : gait_state::segment_cycles(phases, 1.0 / dt, config.detector.min_phase_duration_s)) {
        lr.cycles.push_back({c, lr.trace[c.start_sample].t, lr.trace[c.toe_off_sample].t, lr.trace[c.end_sample].t,
                             lr.trace[c.toe_off_sample].stim_cycle});
      }
    } catch (const Error& e) {
      lr.cycle_error = e.what();
    }
  }
  return rec;
}

void write_cell(const CellRecording& cell, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  using csv::format;

  {
    auto out = open_out(dir / "trace.csv");
    csv::write_row(out, {"t_s", "phase", "clearance_mm", "a_ta", "a_gs", "stim_ta_us", "stim_gs_us", "gs_force_n",
                         "leg", "cycle_fraction", "true_clearance_mm", "stim_cycle"});
    const std::size_t n = cell.leg(Leg::Right).trace.size();
    for (std::size_t k = 0; k < n; ++k) {
      for (Leg leg : kLegs) {
        const TraceSample& s = cell.leg(leg).trace.at(k);
        csv::write_row(out, {format(s.t), std::string(phase_name(s.phase)), format(s.clearance_mm),
                             format(s.a_ta), format(s.a_gs), format(s.stim_ta_us), format(s.stim_gs_us),
                             format(s.gs_force_n), std::string(to_string(leg)), format(s.cycle_fraction),
                             format(s.true_clearance_mm), s.stim_cycle ? "1" : "0"});
      }
    }
  }
  {
    auto out = open_out(dir / "stim.csv");
    csv::write_row(out, {"t_s", "leg", "muscle", "pulse_width_us", "amplitude_ma", "frequency_hz"});
    const std::string amp = format(cell.amplitude_ma), freq = format(cell.frequency_hz);
    for (Leg leg : kLegs) {
      const auto& lr = cell.leg(leg);
      for (std::size_t k = 0; k < lr.ta_log.size() && k < lr.gs_log.size(); ++k) {
        const std::string t = format(lr.ta_log[k].t), side(to_string(leg));
        csv::write_row(out, {t, side, "TA", format(lr.ta_log[k].pulse_width_us), amp, freq});
        csv::write_row(out, {t, side, "GS", format(lr.gs_log[k].pulse_width_us), amp, freq});
      }
    }
  }
  {
    auto out = open_out(dir / "cycles.csv");
    csv::write_row(out, {"leg", "cycle", "start_s", "toe_off_s", "end_s", "start_sample", "toe_off_sample",
                         "end_sample", "stim_cycle"});
    for (Leg leg : kLegs) {
      const auto& cycles = cell.leg(leg).cycles;
      for (std::size_t c = 0; c < cycles.size(); ++c) {
        const auto& r = cycles[c];
        csv::write_row(out, {std::string(to_string(leg)), std::to_string(c), format(r.t_start), format(r.t_toe_off),
                             format(r.t_end), std::to_string(r.index.start_sample),
                             std::to_string(r.index.toe_off_sample), std::to_string(r.index.end_sample),
                             r.stim_cycle ? "1" : "0"});
      }
    }
  }
  {
    const auto& sc = cell.scenario;
    json errors = json::object();
    for (Leg leg : kLegs) {
      if (!cell.leg(leg).cycle_error.empty()) errors[std::string(to_string(leg))] = cell.leg(leg).cycle_error;
    }
    const json meta = {
        {"cell", sc.cell_id()},
        {"speed_mps", sc.speed_mps},
        {"incline_deg", sc.incline_deg},
        {"condition", std::string(plant::to_string(sc.condition))},
        {"stim_probability", sc.stim_probability},
        {"seed", sc.seed},
        {"noise_sd_mm", {{"right", sc.noise_sd_mm(Leg::Right)}, {"left", sc.noise_sd_mm(Leg::Left)}}},
        {"duration_s", cell.duration_s},
        {"dt_s", cell.dt},
        {"amplitude_ma", cell.amplitude_ma},
        {"frequency_hz", cell.frequency_hz},
        {"calibration", to_json(cell.calibration)},
        {"cycle_errors", errors},
    };
    auto out = open_out(dir / "cell.json");
    out << meta.dump(2) << '\n';
  }
}

CellRecording read_cell(const fs::path& dir) {
  for (const char* name : {"trace.csv", "stim.csv", "cycles.csv", "cell.json"}) {
    if (!fs::exists(dir / name)) throw Error(ErrorCode::MissingTraces, (dir / name).string() + " not found");
  }
  CellRecording cell;
  try {
    std::ifstream in(dir / "cell.json");
    const json meta = json::parse(in);
    cell.scenario.speed_mps = meta.at("speed_mps").get<double>();
    cell.scenario.incline_deg = meta.at("incline_deg").get<double>();
    cell.scenario.condition = plant::parse_condition(meta.at("condition").get<std::string>());
    cell.scenario.stim_probability = meta.at("stim_probability").get<double>();
    cell.scenario.seed = meta.at("seed").get<std::uint64_t>();
    cell.duration_s = meta.at("duration_s").get<double>();
    cell.dt = meta.at("dt_s").get<double>();
    cell.amplitude_ma = meta.at("amplitude_ma").get<double>();
    cell.frequency_hz = meta.at("frequency_hz").get<double>();
    cell.calibration = calibration_from_json(meta.at("calibration"));
    for (const auto& [leg, msg] : meta.at("cycle_errors").items()) {
      cell.legs[idx(parse_leg(leg))].cycle_error = msg.get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, (dir / "cell.json").string() + ": " + e.what());
  }

  const csv::Table trace = csv::read(dir / "trace.csv");
  {
    const std::size_t t = trace.column("t_s"), leg = trace.column("leg"), phase = trace.column("phase"),
                      clear = trace.column("clearance_mm"), a_ta = trace.column("a_ta"), a_gs = trace.column("a_gs"),
                      ta = trace.column("stim_ta_us"), gs = trace.column("stim_gs_us"),
                      force = trace.column("gs_force_n"), frac = trace.column("cycle_fraction"),
                      truth = trace.column("true_clearance_mm"), gate = trace.column("stim_cycle");
    for (const auto& r : trace.rows) {
      TraceSample s;
      s.t = csv::parse_double(r[t]);
      s.phase = parse_phase(r[phase]);
      s.clearance_mm = csv::parse_double(r[clear]);
      s.a_ta = csv::parse_double(r[a_ta]);
      s.a_gs = csv::parse_double(r[a_gs]);
      s.stim_ta_us = csv::parse_double(r[ta]);
      s.stim_gs_us = csv::parse_double(r[gs]);
      s.gs_force_n = csv::parse_double(r[force]);
      s.cycle_fraction = csv::parse_double(r[frac]);
      s.true_clearance_mm = csv::parse_double(r[truth]);
      s.stim_cycle = r[gate] == "1";
      cell.legs[idx(parse_leg(r[leg]))].trace.push_back(s);
    }
  }

  const csv::Table stim = csv::read(dir / "stim.csv");
  {
    const std::size_t t = stim.column("t_s"), leg = stim.column("leg"), channel = stim.column("muscle"),
                      pw = stim.column("pulse_width_us");
    for (const auto& r : stim.rows) {
      auto& lr = cell.legs[idx(parse_leg(r[leg]))];
      if (r[channel] != "TA" && r[channel] != "GS") throw Error(ErrorCode::IoError, "unknown muscle " + r[channel]);
      auto& log = r[channel] == "TA" ? lr.ta_log : lr.gs_log;
      log.push_back({csv::parse_double(r[t]), csv::parse_double(r[pw])});
    }
  }

  const csv::Table cycles = csv::read(dir / "cycles.csv");
  {
    const std::size_t leg = cycles.column("leg"), start = cycles.column("start_sample"),
                      toe = cycles.column("toe_off_sample"), end = cycles.column("end_sample"),
                      t0 = cycles.column("start_s"), t1 = cycles.column("toe_off_s"), t2 = cycles.column("end_s"),
                      gate = cycles.column("stim_cycle");
    for (const auto& r : cycles.rows) {
      CycleRecord c;
      c.index = {std::stoul(r[start]), std::stoul(r[toe]), std::stoul(r[end])};
      c.t_start = csv::parse_double(r[t0]);
      c.t_toe_off = csv::parse_double(r[t1]);
      c.t_end = csv::parse_double(r[t2]);
      c.stim_cycle = r[gate] == "1";
      auto& lr = cell.legs[idx(parse_leg(r[leg]))];
      if (c.index.end_sample >= lr.trace.size()) throw Error(ErrorCode::IoError, "cycle exceeds trace length");
      lr.cycles.push_back(c);
    }
  }
  return cell;
}

}  // namespace fesloop::session
