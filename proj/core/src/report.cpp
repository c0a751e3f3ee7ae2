#include "fesloop/report.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <thread>

#include "fesloop/csv.hpp"
#include "fesloop/errors.hpp"
#include "fesloop/rng.hpp"

namespace fesloop::report {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using plant::Condition;

constexpr std::array<Condition, 4> kOrder{Condition::FesOff, Condition::FesFd, Condition::FesOl, Condition::FesCl};

struct Source {
  const session::CellRecording* cell = nullptr;
  Leg leg = Leg::Right;
};

struct Group {
  double speed = 0.0;
  double incline = 0.0;
  std::map<Condition, const session::CellRecording*> cells;
};

std::string format_key(double speed, double incline) { return csv::format(speed) + "_" + csv::format(incline); }

std::vector<double> slice(const std::vector<session::TraceSample>& trace, std::size_t from, std::size_t to,
                          double session::TraceSample::*field) {
  std::vector<double> out;
  out.reserve(to - from + 1);
  for (std::size_t k = from; k <= to; ++k) out.push_back(trace[k].*field);
  return out;
}

ConditionStats condition_stats(Condition condition, const Source& src, const AnalysisConfig& cfg) {
  const session::CellRecording& cell = *src.cell;
  const session::LegRecording& lr = cell.leg(src.leg);
  if (!lr.cycle_error.empty()) throw Error(ErrorCode::NoCompleteCycle, lr.cycle_error);

  ConditionStats s;
  s.condition = std::string(plant::to_string(condition));
  s.source = cell.scenario.cell_id() + "/" + std::string(to_string(src.leg));
  const bool gated_only = plant::stimulates(condition);

  std::vector<analysis::CycleSeries> ta, gs;
  double start_sum = 0.0;
  for (std::size_t c = 0; c < lr.cycles.size(); ++c) {
    const auto& cyc = lr.cycles[c];
    if (gated_only && !cyc.stim_cycle) continue;
    const auto& idx = cyc.index;
    auto series = analysis::resample_cycle(slice(lr.trace, idx.start_sample, idx.end_sample,
                                                 &session::TraceSample::clearance_mm),
                                           c, s.condition);
    const double toe = static_cast<double>(idx.toe_off_sample - idx.start_sample) /
                       static_cast<double>(idx.end_sample - idx.start_sample);
    start_sum += toe;
    s.mtc_mm.push_back(analysis::min_toe_clearance(series, {toe, 1.0}, cfg.mtc));
    s.clearance.push_back(std::move(series));
    ta.push_back(analysis::resample_cycle(
        slice(lr.trace, idx.start_sample, idx.end_sample, &session::TraceSample::stim_ta_us), c, s.condition));
    gs.push_back(analysis::resample_cycle(
        slice(lr.trace, idx.start_sample, idx.end_sample, &session::TraceSample::stim_gs_us), c, s.condition));
    for (std::size_t k = idx.toe_off_sample; k < idx.end_sample; ++k) {
      ++s.swing_samples;
      s.swing_below_c_min += lr.trace[k].clearance_mm < cfg.c_min_mm;
    }
  }
  if (s.clearance.size() < 2) {
    throw Error(ErrorCode::TooFewCycles, s.source + " has " + std::to_string(s.clearance.size()) + " usable cycles");
  }
  s.curve = analysis::mean_sd(s.clearance);
  s.ta_profile = analysis::mean_sd(ta);
  s.gs_profile = analysis::mean_sd(gs);
  s.swing = {start_sum / static_cast<double>(s.clearance.size()), 1.0};
  s.variability = analysis::within_cycle_variability(s.clearance, s.swing);
  s.mtc_mean_mm = 0.0;
  for (double m : s.mtc_mm) s.mtc_mean_mm += m;
  s.mtc_mean_mm /= static_cast<double>(s.mtc_mm.size());
  s.target_sd_mm = plant::noise_model(cell.scenario.speed_mps, cell.scenario.incline_deg, condition);
  return s;
}

std::vector<analysis::TimeWindow> cycle_windows(const session::LegRecording& lr, std::size_t n) {
  std::vector<analysis::TimeWindow> w;
  for (std::size_t c = 0; c < n; ++c) w.push_back({lr.cycles[c].t_start, lr.cycles[c].t_end});
  return w;
}

ChargeResult charge_result(const session::CellRecording& cell, const std::string& key) {
  ChargeResult out;
  const auto& cl = cell.leg(Leg::Right);
  const auto& ol = cell.leg(Leg::Left);
  const std::size_t n = std::min(cl.cycles.size(), ol.cycles.size());
  if (n == 0) {
    out.reason = "no complete cycles on both legs";
    return out;
  }
  const auto cl_windows = cycle_windows(cl, n);
  const auto ol_windows = cycle_windows(ol, n);
  out.cl = analysis::cumulative_charge(cl.ta_log, cell.amplitude_ma, cell.frequency_hz, cl_windows, key);
  out.ol = analysis::cumulative_charge(ol.ta_log, cell.amplitude_ma, cell.frequency_hz, ol_windows, key);
  out.cl_delivered_pulses = analysis::delivered_pulses(cl.ta_log, cell.frequency_hz, cl_windows);
  out.report = analysis::reduction_report(out.cl, out.ol, cell.calibration.leg(Leg::Right).ta,
                                          out.cl_delivered_pulses, cell.amplitude_ma);
  out.applicable = true;
  return out;
}

GroupResult analyze_group(const Group& g, const AnalysisConfig& cfg) {
  GroupResult r;
  r.speed_mps = g.speed;
  r.incline_deg = g.incline;
  const std::string key = r.key();

  auto cell_of = [&](Condition c) -> const session::CellRecording* {
    auto it = g.cells.find(c);
    return it == g.cells.end() ? nullptr : it->second;
  };
  for (Condition c : kOrder) {
    Source src;
    if (c == Condition::FesOl && !cell_of(c) && cell_of(Condition::FesCl)) {
      src = {cell_of(Condition::FesCl), Leg::Left};
    } else if (cell_of(c)) {
      src = {cell_of(c), Leg::Right};
    } else {
      continue;
    }
    try {
      r.conditions.push_back(condition_stats(c, src, cfg));
    } catch (const Error& e) {
      r.errors.push_back(key + "/" + std::string(plant::to_string(c)) + ": " + e.what());
    }
  }

  for (std::size_t i = 0; i < r.conditions.size(); ++i) {
    for (std::size_t j = i + 1; j < r.conditions.size(); ++j) {
      const auto& a = r.conditions[i];
      const auto& b = r.conditions[j];
      PairTest t{a.condition, b.condition, {}, {}};
      analysis::PermutationConfig pc = cfg.permutation;
      pc.seed = derive_seed(cfg.permutation.seed, key + "/" + a.condition + "/" + b.condition);
      t.curve = analysis::permutation_test(a.clearance, b.clearance, pc);
      auto column = [](const std::vector<double>& v) {
        std::vector<std::vector<double>> rows;
        for (double x : v) rows.push_back({x});
        return rows;
      };
      pc.seed = derive_seed(pc.seed, "mtc");
      t.mtc = analysis::permutation_test(column(a.mtc_mm), column(b.mtc_mm), pc);
      r.tests.push_back(std::move(t));
    }
  }

  if (const auto* cl = cell_of(Condition::FesCl)) {
    try {
      r.charge = charge_result(*cl, key);
    } catch (const Error& e) {
      r.charge.reason = e.what();
      r.errors.push_back(key + "/charge: " + e.what());
    }
  } else {
    r.charge.reason = "not applicable: no FES_CL cell";
  }
  return r;
}

json curve(const std::vector<double>& v) { return json(v); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

}  // namespace

std::string GroupResult::key() const { return format_key(speed_mps, incline_deg); }

const ConditionStats* GroupResult::find(std::string_view condition) const {
  for (const auto& c : conditions) {
    if (c.condition == condition) return &c;
  }
  return nullptr;
}

std::vector<std::string> AnalysisResult::errors() const {
  std::vector<std::string> out;
  for (const auto& g : groups) out.insert(out.end(), g.errors.begin(), g.errors.end());
  return out;
}

AnalysisResult analyze(const std::vector<session::CellRecording>& cells, const AnalysisConfig& cfg,
                       unsigned workers) {
  std::vector<Group> groups;
  for (const auto& cell : cells) {
    const auto& sc = cell.scenario;
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const Group& g) { return g.speed == sc.speed_mps && g.incline == sc.incline_deg; });
    if (it == groups.end()) {
      groups.push_back({sc.speed_mps, sc.incline_deg, {}});
      it = std::prev(groups.end());
    }
    if (!it->cells.emplace(sc.condition, &cell).second) {
      throw Error(ErrorCode::ConfigError, "duplicate cell " + sc.cell_id());
    }
  }
  std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    return a.speed != b.speed ? a.speed < b.speed : a.incline < b.incline;
  });

  AnalysisResult result;
  result.groups.resize(groups.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < groups.size(); i = next++) result.groups[i] = analyze_group(groups[i], cfg);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(groups.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return result;
}

json summary_json(const AnalysisResult& result, const AnalysisConfig& cfg) {
  json groups = json::array();
  for (const auto& g : result.groups) {
    json conditions = json::object();
    for (const auto& c : g.conditions) {
      conditions[c.condition] = {
          {"source", c.source},
          {"cycles", c.clearance.size()},
          {"swing_start_fraction", c.swing.start},
          {"mean_curve_mm", curve(c.curve.mean)},
          {"sd_curve_mm", curve(c.curve.sd)},
          {"ta_mean_curve_us", curve(c.ta_profile.mean)},
          {"gs_mean_curve_us", curve(c.gs_profile.mean)},
          {"mtc_mm", c.mtc_mm},
          {"mtc_mean_mm", c.mtc_mean_mm},
          {"variability", {{"mean_sd_mm", c.variability.mean_sd},
                           {"sd_sd_mm", c.variability.sd_sd},
                           {"target_sd_mm", c.target_sd_mm}}},
          {"swing_fraction_below_c_min", c.fraction_below_c_min()},
      };
    }
    json tests = json::array();
    for (const auto& t : g.tests) {
      const auto n_sig = std::count(t.curve.significant_mask.begin(), t.curve.significant_mask.end(), true);
      tests.push_back({{"a", t.a},
                       {"b", t.b},
                       {"p_values", t.curve.p_values},
                       {"significant_points", n_sig},
                       {"mtc_p_value", t.mtc.p_values.front()}});
    }
    json charge;
    if (g.charge.applicable) {
      charge = {{"applicable", true},
                {"cycles", g.charge.cl.per_cycle_mc.size()},
                {"cl_total_mc", g.charge.cl.total_mc},
                {"ol_total_mc", g.charge.ol.total_mc},
                {"cl_delivered_pulses", g.charge.cl_delivered_pulses},
                {"reduction", g.charge.report.reduction},
                {"floor_bound", g.charge.report.floor_bound},
                {"within_bound", g.charge.report.within_bound}};
    } else {
      charge = {{"applicable", false}, {"reason", g.charge.reason.empty() ? "not applicable" : g.charge.reason}};
    }
    groups.push_back({{"key", g.key()},
                      {"speed_mps", g.speed_mps},
                      {"incline_deg", g.incline_deg},
                      {"conditions", conditions},
                      {"tests", tests},
                      {"charge", charge},
                      {"errors", g.errors}});
  }
  return {{"analysis",
           {{"n_perm", cfg.permutation.n_perm},
            {"alpha", cfg.permutation.alpha},
            {"seed", cfg.permutation.seed},
            {"mtc_window", {cfg.mtc.from, cfg.mtc.to}},
            {"c_min_mm", cfg.c_min_mm}}},
          {"groups", groups},
          {"errors", result.errors()}};
}

void write_outputs(const AnalysisResult& result, const AnalysisConfig& cfg, const fs::path& dir) {
  const fs::path figures = dir / "figures";
  std::error_code ec;
  fs::create_directories(figures, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + figures.string() + ": " + ec.message());
  {
    auto out = open_out(dir / "summary.json");
    out << summary_json(result, cfg).dump(2) << '\n';
  }
  using csv::format;
  auto percent = [](std::size_t k) { return std::to_string(k); };

  auto clearance = open_out(figures / "clearance_curves.csv");
  auto profiles = open_out(figures / "stim_profiles.csv");
  auto mtc = open_out(figures / "mtc.csv");
  auto variability = open_out(figures / "variability.csv");
  auto significance = open_out(figures / "significance.csv");
  auto charge = open_out(figures / "charge.csv");
  csv::write_row(clearance, {"speed_mps", "incline_deg", "condition", "percent", "mean_mm", "sd_mm"});
  csv::write_row(profiles, {"speed_mps", "incline_deg", "condition", "channel", "percent", "mean_us", "sd_us"});
  csv::write_row(mtc, {"speed_mps", "incline_deg", "condition", "cycle", "mtc_mm"});
  csv::write_row(variability, {"speed_mps", "incline_deg", "condition", "mean_sd_mm", "sd_sd_mm", "target_sd_mm"});
  csv::write_row(significance, {"speed_mps", "incline_deg", "a", "b", "percent", "p_value", "significant"});
  csv::write_row(charge, {"speed_mps", "incline_deg", "controller", "total_mc", "cycles", "reduction", "floor_bound"});

  for (const auto& g : result.groups) {
    const std::string sp = format(g.speed_mps), inc = format(g.incline_deg);
    for (const auto& c : g.conditions) {
      for (std::size_t k = 0; k < c.curve.mean.size(); ++k) {
        csv::write_row(clearance, {sp, inc, c.condition, percent(k), format(c.curve.mean[k]), format(c.curve.sd[k])});
      }
      for (const auto& [channel, ms] : {std::pair{"TA", &c.ta_profile}, std::pair{"GS", &c.gs_profile}}) {
        for (std::size_t k = 0; k < ms->mean.size(); ++k) {
          csv::write_row(profiles,
                         {sp, inc, c.condition, channel, percent(k), format(ms->mean[k]), format(ms->sd[k])});
        }
      }
      for (std::size_t i = 0; i < c.mtc_mm.size(); ++i) {
        csv::write_row(mtc, {sp, inc, c.condition, std::to_string(c.clearance[i].cycle_id), format(c.mtc_mm[i])});
      }
      csv::write_row(variability, {sp, inc, c.condition, format(c.variability.mean_sd), format(c.variability.sd_sd),
                                   format(c.target_sd_mm)});
    }
    for (const auto& t : g.tests) {
      for (std::size_t k = 0; k < t.curve.p_values.size(); ++k) {
        csv::write_row(significance, {sp, inc, t.a, t.b, percent(k), format(t.curve.p_values[k]),
                                      t.curve.significant_mask[k] ? "1" : "0"});
      }
    }
    if (g.charge.applicable) {
      const std::string n = std::to_string(g.charge.cl.per_cycle_mc.size());
      csv::write_row(charge, {sp, inc, "CL", format(g.charge.cl.total_mc), n, format(g.charge.report.reduction),
                              format(g.charge.report.floor_bound)});
      csv::write_row(charge, {sp, inc, "OL", format(g.charge.ol.total_mc), n, "", ""});
    }
  }
}

}  // namespace fesloop::report
