#include "fesloop_cli/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include "fesloop/csv.hpp"
#include "fesloop/errors.hpp"
#include "fesloop/rng.hpp"

namespace fesloop::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) config_error(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      config_error("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_into(const json& j, std::string_view key, T& out) {
  if (auto it = j.find(std::string(key)); it != j.end()) out = it->get<T>();
}

void read_muscle(const json& j, const std::string& where, plant::MuscleModel& m) {
  check_keys(j, where,
             {"true_threshold_us", "true_saturation_us", "max_force_n", "act_tau_s", "deact_tau_s", "clearance_gain_mm"});
  read_into(j, "true_threshold_us", m.true_threshold_us);
  read_into(j, "true_saturation_us", m.true_saturation_us);
  read_into(j, "max_force_n", m.max_force_n);
  read_into(j, "act_tau_s", m.act_tau_s);
  read_into(j, "deact_tau_s", m.deact_tau_s);
  read_into(j, "clearance_gain_mm", m.clearance_gain_mm);
}

json muscle_json(const plant::MuscleModel& m) {
  return {{"true_threshold_us", m.true_threshold_us}, {"true_saturation_us", m.true_saturation_us},
          {"max_force_n", m.max_force_n},             {"act_tau_s", m.act_tau_s},
          {"deact_tau_s", m.deact_tau_s},             {"clearance_gain_mm", m.clearance_gain_mm}};
}

void read_leg_muscles(const json& j, const std::string& where, plant::LegMuscles& lm) {
  check_keys(j, where, {"ta", "gs"});
  if (j.contains("ta")) read_muscle(j.at("ta"), where + ".ta", lm.ta);
  if (j.contains("gs")) read_muscle(j.at("gs"), where + ".gs", lm.gs);
}

void read_plant(const json& j, plant::PlantConfig& p) {
  check_keys(j, "plant", {"noise", "marker_noise_mm", "mtc_mm", "muscles", "legs"});
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    check_keys(n, "plant.noise", {"enabled", "sd_override_mm", "correlation_time_s", "closed_loop_gain"});
    read_into(n, "enabled", p.noise.enabled);
    if (n.contains("sd_override_mm") && !n.at("sd_override_mm").is_null()) {
      p.noise.sd_override_mm = n.at("sd_override_mm").get<double>();
    }
    read_into(n, "correlation_time_s", p.noise.correlation_time_s);
    read_into(n, "closed_loop_gain", p.noise.closed_loop_gain);
  }
  read_into(j, "marker_noise_mm", p.marker_noise_mm);
  read_into(j, "mtc_mm", p.mtc_mm);
  if (j.contains("muscles")) {
    for (auto& lm : p.legs) read_leg_muscles(j.at("muscles"), "plant.muscles", lm);
  }
  if (j.contains("legs")) {
    check_keys(j.at("legs"), "plant.legs", {"right", "left"});
    for (Leg leg : {Leg::Right, Leg::Left}) {
      const std::string name(to_string(leg));
      if (j.at("legs").contains(name)) {
        read_leg_muscles(j.at("legs").at(name), "plant.legs." + name, p.legs[static_cast<std::size_t>(leg)]);
      }
    }
  }
}

void read_controller(const json& j, controllers::ControllerConfig& c) {
  check_keys(j, "controller", {"k_p", "k_d", "k_i", "c_min_mm", "c_thr_mm", "rate_limit_us", "amplitude_ma",
                               "frequency_hz", "trapezoid"});
  read_into(j, "k_p", c.gains.k_p);
  read_into(j, "k_d", c.gains.k_d);
  read_into(j, "k_i", c.gains.k_i);
  read_into(j, "c_min_mm", c.thresholds.c_min);
  read_into(j, "c_thr_mm", c.thresholds.c_thr);
  read_into(j, "rate_limit_us", c.rate_limit_us);
  read_into(j, "amplitude_ma", c.amplitude_ma);
  read_into(j, "frequency_hz", c.frequency_hz);
  if (j.contains("trapezoid")) {
    const json& t = j.at("trapezoid");
    check_keys(t, "controller.trapezoid", {"ramp_up", "plateau", "ramp_down"});
    read_into(t, "ramp_up", c.fractions.ramp_up);
    read_into(t, "plateau", c.fractions.plateau);
    read_into(t, "ramp_down", c.fractions.ramp_down);
  }
}

void read_analysis(const json& j, report::AnalysisConfig& a) {
  check_keys(j, "analysis", {"n_perm", "alpha", "mtc_window"});
  read_into(j, "n_perm", a.permutation.n_perm);
  read_into(j, "alpha", a.permutation.alpha);
  if (j.contains("mtc_window")) {
    const auto w = j.at("mtc_window").get<std::vector<double>>();
    if (w.size() != 2) config_error("analysis.mtc_window must have two entries");
    a.mtc = {w[0], w[1]};
  }
}

std::vector<std::string> split_cells(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& f) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned count = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < count; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::TooFewSamples:
    case ErrorCode::TooFewCycles:
    case ErrorCode::EmptyWindow:
    case ErrorCode::UnsortedLog:
    case ErrorCode::MismatchedScenario:
    case ErrorCode::NoCompleteCycle: return kExitAnalysis;
    default: return kExitConfig;
  }
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  try {
    check_keys(j, "config", {"grid", "stim_probability", "duration_off_s", "duration_stim_s", "duration_s", "seed",
                             "workers", "cells", "controller", "plant", "analysis", "output_dir"});
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      check_keys(g, "grid", {"speeds", "inclines", "conditions"});
      read_into(g, "speeds", c.speeds);
      read_into(g, "inclines", c.inclines);
      if (g.contains("conditions")) {
        c.conditions.clear();
        for (const auto& name : g.at("conditions")) c.conditions.push_back(plant::parse_condition(name.get<std::string>()));
      }
    }
    read_into(j, "stim_probability", c.stim_probability);
    read_into(j, "duration_off_s", c.duration_off_s);
    read_into(j, "duration_stim_s", c.duration_stim_s);
    if (j.contains("duration_s")) c.duration_off_s = c.duration_stim_s = j.at("duration_s").get<double>();
    read_into(j, "seed", c.seed);
    read_into(j, "workers", c.workers);
    read_into(j, "cells", c.cells);
    if (j.contains("controller")) read_controller(j.at("controller"), c.controller);
    if (j.contains("plant")) read_plant(j.at("plant"), c.plant);
    if (j.contains("analysis")) read_analysis(j.at("analysis"), c.analysis);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    config_error(std::string("malformed config: ") + e.what());
  } catch (const Error& e) {
    config_error(e.what());
  }
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json conditions_json = json::array();
  for (auto cond : conditions) conditions_json.push_back(std::string(plant::to_string(cond)));
  json noise = {{"enabled", plant.noise.enabled},
                {"correlation_time_s", plant.noise.correlation_time_s},
                {"closed_loop_gain", plant.noise.closed_loop_gain}};
  noise["sd_override_mm"] = plant.noise.sd_override_mm ? json(*plant.noise.sd_override_mm) : json(nullptr);
  json legs = json::object();
  for (Leg leg : {Leg::Right, Leg::Left}) {
    const auto& lm = plant.muscles(leg);
    legs[std::string(to_string(leg))] = {{"ta", muscle_json(lm.ta)}, {"gs", muscle_json(lm.gs)}};
  }
  return {
      {"grid", {{"speeds", speeds}, {"inclines", inclines}, {"conditions", conditions_json}}},
      {"stim_probability", stim_probability},
      {"duration_off_s", duration_off_s},
      {"duration_stim_s", duration_stim_s},
      {"seed", seed},
      {"workers", workers},
      {"cells", cells},
      {"controller",
       {{"k_p", controller.gains.k_p},
        {"k_d", controller.gains.k_d},
        {"k_i", controller.gains.k_i},
        {"c_min_mm", controller.thresholds.c_min},
        {"c_thr_mm", controller.thresholds.c_thr},
        {"rate_limit_us", controller.rate_limit_us},
        {"amplitude_ma", controller.amplitude_ma},
        {"frequency_hz", controller.frequency_hz},
        {"trapezoid",
         {{"ramp_up", controller.fractions.ramp_up},
          {"plateau", controller.fractions.plateau},
          {"ramp_down", controller.fractions.ramp_down}}}}},
      {"plant", {{"noise", noise}, {"marker_noise_mm", plant.marker_noise_mm}, {"mtc_mm", plant.mtc_mm}, {"legs", legs}}},
      {"analysis",
       {{"n_perm", analysis.permutation.n_perm},
        {"alpha", analysis.permutation.alpha},
        {"mtc_window", {analysis.mtc.from, analysis.mtc.to}}}},
      {"output_dir", output_dir.string()},
  };
}

void RunConfig::validate() const {
  if (speeds.empty() || inclines.empty() || conditions.empty()) config_error("scenario grid must not be empty");
  if (!(duration_off_s > 0.0 && duration_stim_s > 0.0)) config_error("durations must be positive");
  if (workers == 0) config_error("workers must be at least 1");
  if (analysis.permutation.n_perm == 0) config_error("analysis.n_perm must be positive");
  if (!(analysis.permutation.alpha > 0.0 && analysis.permutation.alpha < 1.0)) config_error("alpha must lie in (0, 1)");
  try {
    controller.validate();
    for (double s : speeds) {
      for (double i : inclines) plant::make_scenario(s, i, plant::Condition::FesOff, stim_probability, seed, plant);
    }
  } catch (const Error& e) {
    config_error(e.what());
  }
  if (!cells.empty()) {
    const auto all = scenarios();
    for (const auto& id : cells) {
      if (std::none_of(all.begin(), all.end(), [&](const plant::Scenario& s) { return s.cell_id() == id; })) {
        config_error("cell '" + id + "' is not in the grid");
      }
    }
  }
}

std::vector<plant::Scenario> RunConfig::scenarios() const {
  std::vector<plant::Scenario> out;
  for (double s : speeds) {
    for (double i : inclines) {
      for (auto cond : conditions) {
        plant::Scenario sc{s, i, cond, stim_probability, 0, plant};
        if (!cells.empty() && std::find(cells.begin(), cells.end(), sc.cell_id()) == cells.end()) continue;
        // Conditions at one speed and incline share the walker realization.
        sc.seed = derive_seed(seed, csv::format(s) + "_" + csv::format(i));
        out.push_back(std::move(sc));
      }
    }
  }
  return out;
}

session::SessionConfig RunConfig::session_for(plant::Condition condition) const {
  session::SessionConfig s;
  s.controller = controller;
  s.duration_s = plant::stimulates(condition) ? duration_stim_s : duration_off_s;
  return s;
}

bool RunConfig::stimulates_any() const {
  return std::any_of(conditions.begin(), conditions.end(), [](auto c) { return plant::stimulates(c); });
}

RunConfig load_config(const std::optional<fs::path>& path) {
  if (!path) return RunConfig{};
  std::ifstream in(*path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path->string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path->string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

void apply(RunConfig& config, const Overrides& o) {
  if (o.seed) config.seed = *o.seed;
  if (o.out_dir) config.output_dir = *o.out_dir;
  if (o.cells) config.cells = split_cells(*o.cells);
  if (o.duration_s) config.duration_off_s = config.duration_stim_s = *o.duration_s;
  if (o.workers) config.workers = *o.workers;
  config.validate();
}

fs::path calibration_path(const RunConfig& config) { return config.output_dir / "calibration.json"; }

fs::path cell_dir(const RunConfig& config, const plant::Scenario& scenario) {
  return config.output_dir / "cells" / scenario.cell_id();
}

session::Calibration cmd_calibrate(const RunConfig& config, std::ostream& log) {
  const auto calib = session::calibrate(config.plant);
  write_json(calibration_path(config), session::to_json(calib));
  for (Leg leg : {Leg::Right, Leg::Left}) {
    const auto& l = calib.leg(leg);
    log << to_string(leg) << " TA u_thr=" << l.ta.u_thr << " u_max=" << l.ta.u_max << " | GS u_thr=" << l.gs.u_thr
        << " u_max=" << l.gs.u_max << " foot-drop peak=" << l.foot_drop_peak_us << " us (" << l.foot_drop_force_n
        << " N)\n";
  }
  log << "wrote " << calibration_path(config).string() << '\n';
  return calib;
}

std::vector<session::CellRecording> cmd_run(const RunConfig& config, std::ostream& log,
                                            const std::optional<session::Calibration>& calib) {
  session::Calibration c;
  if (calib) {
    c = *calib;
  } else if (fs::exists(calibration_path(config))) {
    std::ifstream in(calibration_path(config));
    try {
      c = session::calibration_from_json(json::parse(in));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidCalib, calibration_path(config).string() + ": " + e.what());
    }
  } else if (!config.stimulates_any()) {
    c = session::calibrate(config.plant);
  } else {
    throw Error(ErrorCode::MissingCalibration,
                calibration_path(config).string() + " not found; run 'calibrate' first");
  }

  const auto scenarios = config.scenarios();
  std::vector<session::CellRecording> cells(scenarios.size());
  parallel_for(scenarios.size(), config.workers, [&](std::size_t i) {
    cells[i] = session::simulate_cell(scenarios[i], c, config.session_for(scenarios[i].condition));
    session::write_cell(cells[i], cell_dir(config, scenarios[i]));
  });
  for (const auto& s : scenarios) log << "wrote " << cell_dir(config, s).string() << '\n';
  return cells;
}

int cmd_analyze(const RunConfig& config, std::ostream& log, const std::vector<session::CellRecording>* recorded) {
  std::vector<session::CellRecording> loaded;
  if (!recorded) {
    const auto scenarios = config.scenarios();
    loaded.resize(scenarios.size());
    parallel_for(scenarios.size(), config.workers,
                 [&](std::size_t i) { loaded[i] = session::read_cell(cell_dir(config, scenarios[i])); });
    recorded = &loaded;
  }
  report::AnalysisConfig cfg = config.analysis;
  cfg.permutation.seed = derive_seed(config.seed, "analysis");
  cfg.c_min_mm = config.controller.thresholds.c_min;
  const auto result = report::analyze(*recorded, cfg, config.workers);
  report::write_outputs(result, cfg, config.output_dir);
  log << "wrote " << (config.output_dir / "summary.json").string() << '\n';
  for (const auto& g : result.groups) {
    if (g.charge.applicable) {
      log << g.key() << ": charge reduction " << g.charge.report.reduction << " (floor bound "
          << g.charge.report.floor_bound << ")\n";
    }
  }
  const auto errors = result.errors();
  for (const auto& e : errors) log << "analysis error: " << e << '\n';
  return errors.empty() ? kExitOk : kExitAnalysis;
}

int cmd_all(const RunConfig& config, std::ostream& log) {
  const auto calib = cmd_calibrate(config, log);
  const auto cells = cmd_run(config, log, calib);
  return cmd_analyze(config, log, &cells);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Closed-loop FES foot-drop simulator and analysis pipeline"};
  app.require_subcommand(1);

  std::optional<fs::path> config_path;
  Overrides o;
  std::string command;
  const std::pair<const char*, const char*> commands[] = {
      {"calibrate", "Identify u_thr/u_max for all four muscles and tune the foot-drop peak"},
      {"run", "Simulate the configured cells and write their traces"},
      {"analyze", "Statistics, clearance curves and charge from recorded traces"},
      {"all", "calibrate, run and analyze in one go"},
  };
  for (const auto& [name, description] : commands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Master seed");
    sub->add_option("--out-dir", o.out_dir, "Output directory");
    sub->add_option("--cells", o.cells, "Comma-separated cell ids, e.g. 0.7_0_FES_CL");
    sub->add_option("--duration", o.duration_s, "Duration of every cell in seconds")->check(CLI::PositiveNumber);
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::Range(1u, 256u));
    sub->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << '\n';
    return kExitConfig;
  }

  try {
    RunConfig config = load_config(config_path);
    apply(config, o);
    if (command == "calibrate") {
      cmd_calibrate(config, out);
      return kExitOk;
    }
    if (command == "run") {
      cmd_run(config, out);
      return kExitOk;
    }
    if (command == "analyze") return cmd_analyze(config, out);
    return cmd_all(config, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace fesloop::cli
