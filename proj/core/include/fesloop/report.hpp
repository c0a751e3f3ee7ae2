#pragma once

#include <cstddef>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "fesloop/analysis.hpp"
#include "fesloop/session.hpp"

namespace fesloop::report {

struct AnalysisConfig {
  analysis::PermutationConfig permutation;
  analysis::MtcWindow mtc;
  double c_min_mm = 10.0;
};

/// Statistics of one condition within a speed/incline group. Stimulated
/// conditions use only the cycles in which the gate fired.
struct ConditionStats {
  std::string condition;
  std::string source;  // "<cell>/<leg>"
  std::vector<analysis::CycleSeries> clearance;
  analysis::MeanSd curve;
  analysis::MeanSd ta_profile;
  analysis::MeanSd gs_profile;
  analysis::SwingWindow swing;
  std::vector<double> mtc_mm;
  double mtc_mean_mm = 0.0;
  analysis::Variability variability;
  double target_sd_mm = 0.0;
  std::size_t swing_samples = 0;
  std::size_t swing_below_c_min = 0;

  double fraction_below_c_min() const {
    return swing_samples ? static_cast<double>(swing_below_c_min) / static_cast<double>(swing_samples) : 0.0;
  }
};

struct PairTest {
  std::string a;
  std::string b;
  analysis::PermutationResult curve;
  analysis::PermutationResult mtc;
};

struct ChargeResult {
  bool applicable = false;
  std::string reason;
  analysis::ChargeSummary cl;
  analysis::ChargeSummary ol;
  analysis::ReductionReport report;
  std::size_t cl_delivered_pulses = 0;
};

struct GroupResult {
  double speed_mps = 0.0;
  double incline_deg = 0.0;
  std::vector<ConditionStats> conditions;  // OFF, FD, OL, CL order, when present
  std::vector<PairTest> tests;
  ChargeResult charge;
  std::vector<std::string> errors;

  std::string key() const;
  const ConditionStats* find(std::string_view condition) const;
};

struct AnalysisResult {
  std::vector<GroupResult> groups;  // sorted by speed, then incline

  std::vector<std::string> errors() const;
};

/// Groups cells by speed and incline and runs the full statistics. Groups
/// are processed by up to `workers` threads; the result does not depend on it.
AnalysisResult analyze(const std::vector<session::CellRecording>& cells, const AnalysisConfig& cfg,
                       unsigned workers = 1);

nlohmann::json summary_json(const AnalysisResult& result, const AnalysisConfig& cfg);

/// Writes summary.json and figures/*.csv under `dir`.
void write_outputs(const AnalysisResult& result, const AnalysisConfig& cfg, const std::filesystem::path& dir);

}  // namespace fesloop::report
