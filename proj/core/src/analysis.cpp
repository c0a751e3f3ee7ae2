#include "fesloop/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "fesloop/errors.hpp"
#include "fesloop/rng.hpp"

namespace fesloop::analysis {

namespace {

constexpr double kTieTolerance = 1e-12;
constexpr double kPulseEps = 1e-9;

std::vector<std::vector<double>> rows_of(std::span<const CycleSeries> cycles) {
  std::vector<std::vector<double>> rows;
  rows.reserve(cycles.size());
  for (const auto& c : cycles) rows.push_back(c.values);
  return rows;
}

std::size_t common_length(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  const std::size_t len = a.front().size();
  auto same = [len](const std::vector<double>& r) { return r.size() == len; };
  if (len == 0 || !std::all_of(a.begin(), a.end(), same) || !std::all_of(b.begin(), b.end(), same)) {
    throw Error(ErrorCode::TooFewSamples, "all rows must have the same non-zero length");
  }
  return len;
}

// Pooled rows with the canonical group first: fewer rows, then lexicographically smaller.
struct Pooled {
  std::vector<double> data;  // row-major N x len
  std::size_t rows = 0;
  std::size_t first = 0;
  std::size_t len = 0;
  std::vector<double> total;
  std::vector<double> observed;

  const double* row(std::size_t i) const { return data.data() + i * len; }

  double statistic(double subset_sum, std::size_t j) const {
    const double m = static_cast<double>(first);
    const double rest = static_cast<double>(rows - first);
    return std::abs(subset_sum / m - (total[j] - subset_sum) / rest);
  }

  bool reaches(double stat, std::size_t j) const {
    return stat >= observed[j] - kTieTolerance * (1.0 + observed[j]);
  }
};

Pooled pool(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() < 2 || b.size() < 2) throw Error(ErrorCode::TooFewCycles, "each group needs at least 2 cycles");
  const std::size_t len = common_length(a, b);
  const bool swap = b.size() < a.size() || (b.size() == a.size() && b < a);
  const auto& g1 = swap ? b : a;
  const auto& g2 = swap ? a : b;

  Pooled p;
  p.rows = g1.size() + g2.size();
  p.first = g1.size();
  p.len = len;
  p.data.reserve(p.rows * len);
  for (const auto* g : {&g1, &g2}) {
    for (const auto& r : *g) p.data.insert(p.data.end(), r.begin(), r.end());
  }
  p.total.assign(len, 0.0);
  std::vector<double> first_sum(len, 0.0);
  for (std::size_t i = 0; i < p.rows; ++i) {
    const double* r = p.row(i);
    for (std::size_t j = 0; j < len; ++j) p.total[j] += r[j];
    if (i < p.first) {
      for (std::size_t j = 0; j < len; ++j) first_sum[j] += r[j];
    }
  }
  p.observed.resize(len);
  for (std::size_t j = 0; j < len; ++j) p.observed[j] = p.statistic(first_sum[j], j);
  return p;
}

std::vector<double> sample_sd(const std::vector<std::vector<double>>& rows, const std::vector<double>& mean) {
  const std::size_t len = mean.size();
  std::vector<double> sd(len, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < len; ++j) sd[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
  }
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(rows.size() - 1));
  return sd;
}

void check_log(std::span<const session::StimSample> log, double amplitude_ma, double frequency_hz) {
  if (!(amplitude_ma > 0.0) || !(frequency_hz > 0.0)) {
    throw Error(ErrorCode::ConfigError, "amplitude and frequency must be positive");
  }
  for (std::size_t i = 1; i < log.size(); ++i) {
    if (!(log[i].t > log[i - 1].t)) throw Error(ErrorCode::UnsortedLog, "stimulation log times must strictly increase");
  }
}

// First pulse index at or after t; shared by adjacent windows so no pulse is counted twice.
long long first_pulse(double t, double frequency_hz) {
  return static_cast<long long>(std::ceil(t * frequency_hz - kPulseEps));
}

double width_at(std::span<const session::StimSample> log, double t) {
  auto it = std::upper_bound(log.begin(), log.end(), t + kPulseEps,
                             [](double value, const session::StimSample& s) { return value < s.t; });
  return it == log.begin() ? 0.0 : std::prev(it)->pulse_width_us;
}

template <typename F>
void for_each_pulse(std::span<const session::StimSample> log, double frequency_hz, TimeWindow w, F&& f) {
  for (long long k = first_pulse(w.begin, frequency_hz); k < first_pulse(w.end, frequency_hz); ++k) {
    f(width_at(log, static_cast<double>(k) / frequency_hz));
  }
}

}  // namespace

CycleSeries resample_cycle(std::span<const double> samples, std::size_t cycle_id, std::string condition) {
  if (samples.size() < 4) throw Error(ErrorCode::TooFewSamples, "a cycle needs at least 4 samples");
  CycleSeries out{std::vector<double>(kCyclePoints), cycle_id, std::move(condition)};
  const double last = static_cast<double>(samples.size() - 1);
  for (std::size_t k = 0; k < kCyclePoints; ++k) {
    const double x = last * static_cast<double>(k) / static_cast<double>(kCyclePoints - 1);
    const auto i = std::min(static_cast<std::size_t>(x), samples.size() - 2);
    const double f = x - static_cast<double>(i);
    out.values[k] = f == 0.0 ? samples[i] : samples[i] + f * (samples[i + 1] - samples[i]);
  }
  return out;
}

MeanSd mean_sd(std::span<const CycleSeries> cycles) {
  if (cycles.size() < 2) throw Error(ErrorCode::TooFewCycles, "mean/SD needs at least 2 cycles");
  const auto rows = rows_of(cycles);
  const std::size_t len = common_length(rows, rows);
  MeanSd out;
  out.mean.assign(len, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < len; ++j) out.mean[j] += r[j];
  }
  for (auto& v : out.mean) v /= static_cast<double>(rows.size());
  out.sd = sample_sd(rows, out.mean);
  return out;
}

PermutationResult permutation_test(const std::vector<std::vector<double>>& group_a,
                                   const std::vector<std::vector<double>>& group_b, const PermutationConfig& cfg) {
  if (cfg.n_perm == 0) throw Error(ErrorCode::ConfigError, "n_perm must be positive");
  const Pooled p = pool(group_a, group_b);
  const std::size_t len = p.len;

  Rng rng(derive_seed(cfg.seed, "permutation"));
  std::vector<std::size_t> order(p.rows);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> exceed(len, 0);
  std::vector<double> sum(len);
  for (std::size_t n = 0; n < cfg.n_perm; ++n) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t i = 0; i < p.first; ++i) {
      const std::size_t pick = i + static_cast<std::size_t>(rng.below(p.rows - i));
      std::swap(order[i], order[pick]);
      const double* r = p.row(order[i]);
      for (std::size_t j = 0; j < len; ++j) sum[j] += r[j];
    }
    for (std::size_t j = 0; j < len; ++j) exceed[j] += p.reaches(p.statistic(sum[j], j), j);
  }

  PermutationResult out;
  out.p_values.resize(len);
  out.significant_mask.resize(len);
  for (std::size_t j = 0; j < len; ++j) {
    out.p_values[j] = static_cast<double>(1 + exceed[j]) / static_cast<double>(cfg.n_perm + 1);
    out.significant_mask[j] = out.p_values[j] < cfg.alpha;
  }
  return out;
}

PermutationResult permutation_test(std::span<const CycleSeries> group_a, std::span<const CycleSeries> group_b,
                                   const PermutationConfig& cfg) {
  return permutation_test(rows_of(group_a), rows_of(group_b), cfg);
}

std::vector<double> exact_permutation_p(const std::vector<std::vector<double>>& group_a,
                                        const std::vector<std::vector<double>>& group_b) {
  const Pooled p = pool(group_a, group_b);
  if (p.rows > 24) throw Error(ErrorCode::ConfigError, "exact enumeration is limited to 24 pooled rows");
  std::vector<std::size_t> exceed(p.len, 0);
  std::size_t partitions = 0;
  std::vector<double> sum(p.len);
  // Walk every subset of the pooled rows with exactly `first` members.
  for (std::uint32_t mask = 0; mask < (1u << p.rows); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != p.first) continue;
    ++partitions;
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t i = 0; i < p.rows; ++i) {
      if (!(mask >> i & 1u)) continue;
      const double* r = p.row(i);
      for (std::size_t j = 0; j < p.len; ++j) sum[j] += r[j];
    }
    for (std::size_t j = 0; j < p.len; ++j) exceed[j] += p.reaches(p.statistic(sum[j], j), j);
  }
  std::vector<double> out(p.len);
  for (std::size_t j = 0; j < p.len; ++j) out[j] = static_cast<double>(exceed[j]) / static_cast<double>(partitions);
  return out;
}

double min_toe_clearance(const CycleSeries& cycle, SwingWindow swing, MtcWindow window) {
  if (!(swing.start >= 0.0 && swing.start < swing.end && swing.end <= 1.0) ||
      !(window.from >= 0.0 && window.from < window.to && window.to <= 1.0)) {
    throw Error(ErrorCode::EmptyWindow, "swing and MTC windows must be non-empty ranges inside [0, 1]");
  }
  const double span = swing.end - swing.start;
  const double lo = swing.start + window.from * span;
  const double hi = swing.start + window.to * span;
  const double last = static_cast<double>(cycle.values.size() - 1);
  double best = INFINITY;
  for (std::size_t k = 0; k < cycle.values.size(); ++k) {
    const double f = static_cast<double>(k) / last;
    if (f >= lo - 1e-12 && f <= hi + 1e-12) best = std::min(best, cycle.values[k]);
  }
  if (std::isinf(best)) throw Error(ErrorCode::EmptyWindow, "no cycle point inside the mid-swing window");
  return best;
}

Variability within_cycle_variability(std::span<const CycleSeries> cycles, SwingWindow swing) {
  const MeanSd ms = mean_sd(cycles);
  const double last = static_cast<double>(ms.sd.size() - 1);
  std::vector<double> sds;
  for (std::size_t k = 0; k < ms.sd.size(); ++k) {
    const double f = static_cast<double>(k) / last;
    if (f >= swing.start - 1e-12 && f <= swing.end + 1e-12) sds.push_back(ms.sd[k]);
  }
  if (sds.empty()) throw Error(ErrorCode::EmptyWindow, "no cycle point inside the swing window");
  Variability v;
  v.mean_sd = std::accumulate(sds.begin(), sds.end(), 0.0) / static_cast<double>(sds.size());
  if (sds.size() > 1) {
    double ss = 0.0;
    for (double s : sds) ss += (s - v.mean_sd) * (s - v.mean_sd);
    v.sd_sd = std::sqrt(ss / static_cast<double>(sds.size() - 1));
  }
  return v;
}

ChargeSummary cumulative_charge(std::span<const session::StimSample> log, double amplitude_ma, double frequency_hz,
                                std::span<const TimeWindow> windows, std::string tag) {
  check_log(log, amplitude_ma, frequency_hz);
  ChargeSummary out;
  out.tag = std::move(tag);
  out.per_cycle_mc.reserve(windows.size());
  for (const auto& w : windows) {
    double charge = 0.0;
    for_each_pulse(log, frequency_hz, w, [&](double width) { charge += amplitude_ma * width * 1e-6; });
    out.per_cycle_mc.push_back(charge);
    out.total_mc += charge;
  }
  return out;
}

ChargeSummary cumulative_charge(std::span<const session::StimSample> log, double amplitude_ma, double frequency_hz,
                                TimeWindow window, std::string tag) {
  return cumulative_charge(log, amplitude_ma, frequency_hz, std::span<const TimeWindow>(&window, 1), std::move(tag));
}

std::size_t delivered_pulses(std::span<const session::StimSample> log, double frequency_hz,
                             std::span<const TimeWindow> windows) {
  check_log(log, 1.0, frequency_hz);
  std::size_t n = 0;
  for (const auto& w : windows) for_each_pulse(log, frequency_hz, w, [&](double width) { n += width > 0.0; });
  return n;
}

ReductionReport reduction_report(const ChargeSummary& cl, const ChargeSummary& ol,
                                 const controllers::MuscleCalib& calib, std::size_t cl_delivered_pulses,
                                 double amplitude_ma) {
  if (cl.tag != ol.tag) {
    throw Error(ErrorCode::MismatchedScenario, "charge summaries from different cells: '" + cl.tag + "' vs '" + ol.tag + "'");
  }
  if (!(ol.total_mc > 0.0)) throw Error(ErrorCode::MismatchedScenario, "open-loop charge is zero in '" + ol.tag + "'");
  calib.validate();
  const double floor_mc = amplitude_ma * calib.u_thr * 1e-6 * static_cast<double>(cl_delivered_pulses);
  ReductionReport r;
  r.reduction = 1.0 - cl.total_mc / ol.total_mc;
  r.floor_bound = 1.0 - floor_mc / ol.total_mc;
  r.within_bound = r.reduction <= r.floor_bound + 1e-12;
  return r;
}

}  // namespace fesloop::analysis
