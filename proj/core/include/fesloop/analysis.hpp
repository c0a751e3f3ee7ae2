#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fesloop/controllers.hpp"
#include "fesloop/session.hpp"

namespace fesloop::analysis {

inline constexpr std::size_t kCyclePoints = 101;  // 0..100 % of the gait cycle

/// One signal over one gait cycle, normalized to 101 points.
struct CycleSeries {
  std::vector<double> values;
  std::size_t cycle_id = 0;
  std::string condition;
};

/// Linear interpolation of the samples (first and last inclusive) onto
/// 101 equispaced cycle fractions. Throws TooFewSamples below 4 samples.
CycleSeries resample_cycle(std::span<const double> samples, std::size_t cycle_id = 0, std::string condition = {});

struct MeanSd {
  std::vector<double> mean;
  std::vector<double> sd;  // n-1 denominator
};

/// Pointwise mean and sample SD. Throws TooFewCycles below 2 cycles.
MeanSd mean_sd(std::span<const CycleSeries> cycles);

struct PermutationResult {
  std::vector<double> p_values;
  std::vector<bool> significant_mask;
};

struct PermutationConfig {
  std::size_t n_perm = 10000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

/// Pointwise two-sided permutation test of |mean_a - mean_b| over rows of
/// equal length. p = (1 + #{permuted >= observed}) / (n_perm + 1). The
/// result does not depend on which group is passed first.
PermutationResult permutation_test(const std::vector<std::vector<double>>& group_a,
                                   const std::vector<std::vector<double>>& group_b,
                                   const PermutationConfig& cfg = {});
PermutationResult permutation_test(std::span<const CycleSeries> group_a, std::span<const CycleSeries> group_b,
                                   const PermutationConfig& cfg = {});

/// Exact p-values over every relabeling of the pooled rows (small groups only).
std::vector<double> exact_permutation_p(const std::vector<std::vector<double>>& group_a,
                                        const std::vector<std::vector<double>>& group_b);

/// Fraction range of the swing phase within a cycle (toe-off, heel strike).
struct SwingWindow {
  double start = 0.6;
  double end = 1.0;
};

/// Portion of the swing searched for the minimum; central 20-80 % by default.
struct MtcWindow {
  double from = 0.2;
  double to = 0.8;
};

/// Minimum of the curve over the mid-swing sub-window. Throws EmptyWindow
/// when no cycle point falls inside it.
double min_toe_clearance(const CycleSeries& cycle, SwingWindow swing, MtcWindow window = {});

struct Variability {
  double mean_sd = 0.0;
  double sd_sd = 0.0;
};

/// Pointwise SD across cycles over the swing points, summarized by its mean
/// and SD across points.
Variability within_cycle_variability(std::span<const CycleSeries> cycles, SwingWindow swing);

struct ChargeSummary {
  double total_mc = 0.0;
  std::vector<double> per_cycle_mc;
  std::string tag;
};

struct TimeWindow {
  double begin = 0.0;  // inclusive
  double end = 0.0;    // exclusive
};

/// Charge of the pulses delivered at k/frequency inside each window, each at
/// the pulse width last logged at or before that instant. Charge per pulse is
/// amplitude x pulse width; totals in mC. Throws UnsortedLog unless the log
/// times strictly increase.
ChargeSummary cumulative_charge(std::span<const session::StimSample> log, double amplitude_ma, double frequency_hz,
                                std::span<const TimeWindow> windows, std::string tag = {});
ChargeSummary cumulative_charge(std::span<const session::StimSample> log, double amplitude_ma, double frequency_hz,
                                TimeWindow window, std::string tag = {});

/// Number of pulses inside the windows that were delivered with a non-zero width.
std::size_t delivered_pulses(std::span<const session::StimSample> log, double frequency_hz,
                             std::span<const TimeWindow> windows);

struct ReductionReport {
  double reduction = 0.0;    // 1 - CL/OL
  double floor_bound = 0.0;  // 1 - (u_thr on every delivered CL pulse)/OL
  bool within_bound = false;
};

/// Throws MismatchedScenario when the two summaries carry different tags.
ReductionReport reduction_report(const ChargeSummary& cl, const ChargeSummary& ol,
                                 const controllers::MuscleCalib& calib, std::size_t cl_delivered_pulses,
                                 double amplitude_ma);

}  // namespace fesloop::analysis
