#include "fesloop/gait_state.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fesloop/errors.hpp"

namespace fesloop::gait_state {

namespace {

constexpr double kMinHistorySpan = 0.05;  // s

}  // namespace

double smoothed_ap_velocity(std::span<const ApSample> history, std::size_t window) {
  if (window == 0 || history.size() < window + 1) {
    throw Error(ErrorCode::InsufficientHistory, "need window+1 samples for a velocity estimate");
  }
  const ApSample& last = history[history.size() - 1];
  const ApSample& first = history[history.size() - 1 - window];
  const double span = last.t - first.t;
  if (span <= 0.0) throw Error(ErrorCode::InsufficientHistory, "history times are not increasing");
  // Mean of equally spaced backward differences telescopes to the end-point slope.
  return (last.ap_mm - first.ap_mm) / span;
}

PhaseKind detect_phase(std::span<const ApSample> history, double belt_speed_mps, PhaseKind previous,
                       const DetectorConfig& cfg) {
  if (!(belt_speed_mps > 0.0)) throw Error(ErrorCode::InsufficientHistory, "belt speed must be positive");
  if (history.size() < cfg.velocity_window + 1 ||
      history.back().t - history.front().t < kMinHistorySpan - 1e-12) {
    throw Error(ErrorCode::InsufficientHistory, "PP2 history shorter than 0.05 s");
  }
  const double v = smoothed_ap_velocity(history, cfg.velocity_window);
  const double threshold = cfg.threshold_fraction * belt_speed_mps * 1000.0;
  if (v > threshold) return PhaseKind::Swing;
  if (v < -threshold) return PhaseKind::Stance;
  return previous;
}

bool detect_mid_stance(const std::optional<Vec3>& pp2, const std::optional<Vec3>& asis_left,
                       const std::optional<Vec3>& asis_right) {
  if (!pp2 || !asis_left || !asis_right) {
    throw Error(ErrorCode::MissingMarker, "mid-stance needs PP2 and both ASIS markers");
  }
  const double pelvis_ap = 0.5 * (asis_left->x() + asis_right->x());
  return pp2->x() < pelvis_ap;
}

DurationPredictor::DurationPredictor(std::size_t history, double initial_s)
    : history_(std::max<std::size_t>(history, 1)), initial_(initial_s) {}

void DurationPredictor::observe(double duration_s) {
  recent_.push_back(duration_s);
  while (recent_.size() > history_) recent_.pop_front();
}

double DurationPredictor::predict() const {
  if (recent_.empty()) return initial_;
  return std::accumulate(recent_.begin(), recent_.end(), 0.0) / static_cast<double>(recent_.size());
}

PhaseDetector::PhaseDetector(double belt_speed_mps, DetectorConfig cfg)
    : belt_speed_(belt_speed_mps),
      cfg_(cfg),
      swing_durations_(cfg.swing_history, cfg.initial_swing_duration_s) {
  if (!(belt_speed_mps > 0.0)) throw Error(ErrorCode::InsufficientHistory, "belt speed must be positive");
}

std::size_t PhaseDetector::localize(PhaseKind kind) const {
  // history_ holds the most recent samples; the newest is sample count_-1.
  const std::size_t newest = count_ - 1;
  const std::size_t oldest_allowed = events_.empty() ? 0 : events_.back().sample + 1;
  std::size_t first = newest;
  const std::size_t depth = std::min(cfg_.event_lookback, history_.size() - 1);
  for (std::size_t back = 0; back < depth; ++back) {
    const std::size_t i = history_.size() - 1 - back;
    const double d = history_[i].ap_mm - history_[i - 1].ap_mm;
    const bool new_sign = kind == PhaseKind::Swing ? d > 0.0 : d < 0.0;
    if (!new_sign) break;
    const std::size_t sample = newest - back;
    if (sample < oldest_allowed) break;
    first = sample;
  }
  return first;
}

void PhaseDetector::switch_to(PhaseKind kind, double t) {
  const std::size_t sample = localize(kind);
  const std::size_t offset = count_ - 1 - sample;
  const std::size_t i = history_.size() - 1 - offset;
  // The sign change happened inside the interval ending at `sample`.
  const double event_t = 0.5 * (history_[i].t + history_[i - 1].t);
  events_.push_back({kind == PhaseKind::Swing ? EventKind::ToeOff : EventKind::HeelStrike, sample, event_t});

  if (phase_.kind == PhaseKind::Swing && have_phase_start_) swing_durations_.observe(t - phase_start_t_);
  phase_.kind = kind;
  phase_.mid_stance_reached = false;
  phase_.swing_progress = 0.0;
  phase_start_t_ = t;
  have_phase_start_ = true;
  if (kind == PhaseKind::Swing) {
    swing_started_ = true;
  } else {
    stance_started_ = true;
  }
}

GaitPhase PhaseDetector::update(double t, double pp2_ap_mm, std::optional<bool> posterior_of_pelvis) {
  swing_started_ = stance_started_ = mid_stance_started_ = false;
  history_.push_back({t, pp2_ap_mm});
  while (history_.size() > std::max(cfg_.event_lookback, cfg_.velocity_window) + 2) history_.pop_front();
  ++count_;

  if (history_.size() >= cfg_.velocity_window + 1) {
    const std::vector<ApSample> recent(history_.begin(), history_.end());
    const PhaseKind raw = detect_phase(recent, belt_speed_, phase_.kind, cfg_);
    const bool debounced = !have_phase_start_ || t - phase_start_t_ >= cfg_.min_phase_duration_s - 1e-9;
    if (raw != phase_.kind && debounced) {
      switch_to(raw, t);
    } else if (phase_.kind == PhaseKind::Swing && have_phase_start_ &&
               t - phase_start_t_ > cfg_.max_swing_duration_s) {
      switch_to(PhaseKind::Stance, t);
    }
  }

  if (phase_.kind == PhaseKind::Swing) {
    const double elapsed = have_phase_start_ ? t - phase_start_t_ : 0.0;
    phase_.swing_progress = std::clamp(elapsed / swing_durations_.predict(), 0.0, 1.0);
  } else if (have_phase_start_ && !phase_.mid_stance_reached && posterior_of_pelvis.value_or(false)) {
    // Only stances observed from their onset can latch mid-stance.
    phase_.mid_stance_reached = true;
    mid_stance_started_ = true;
    events_.push_back({EventKind::MidStance, count_ - 1, t});
  }
  return phase_;
}

std::vector<PhaseKind> PhaseDetector::localized_phases() const {
  std::vector<PhaseKind> out(count_, PhaseKind::Stance);
  PhaseKind current = PhaseKind::Stance;
  std::size_t next = 0;
  for (const auto& e : events_) {
    if (e.kind == EventKind::MidStance) continue;
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(next), out.begin() + static_cast<std::ptrdiff_t>(e.sample),
              current);
    current = e.kind == EventKind::ToeOff ? PhaseKind::Swing : PhaseKind::Stance;
    next = e.sample;
  }
  std::fill(out.begin() + static_cast<std::ptrdiff_t>(next), out.end(), current);
  return out;
}

std::vector<CycleIndex> segment_cycles(std::span<const PhaseKind> phase_stream, double sample_rate_hz,
                                       double min_phase_duration_s) {
  struct Run {
    PhaseKind kind;
    std::size_t start;
    std::size_t length;
  };
  const auto min_len = static_cast<std::size_t>(std::llround(min_phase_duration_s * sample_rate_hz));

  std::vector<Run> runs;
  for (std::size_t i = 0; i < phase_stream.size(); ++i) {
    if (runs.empty() || runs.back().kind != phase_stream[i]) {
      runs.push_back({phase_stream[i], i, 1});
    } else {
      ++runs.back().length;
    }
  }

  // Absorb short runs into their predecessor, then coalesce equal neighbours.
  std::vector<Run> clean;
  for (const Run& r : runs) {
    if (!clean.empty() && (r.length < min_len || clean.back().kind == r.kind)) {
      clean.back().length += r.length;
      continue;
    }
    clean.push_back(r);
  }

  std::vector<std::size_t> onsets;
  std::vector<std::size_t> toe_offs;
  for (std::size_t i = 1; i < clean.size(); ++i) {
    if (clean[i].kind == PhaseKind::Stance) onsets.push_back(clean[i].start);
  }
  if (onsets.size() < 2) throw Error(ErrorCode::NoCompleteCycle, "fewer than two stance onsets");

  std::vector<CycleIndex> cycles;
  std::size_t run = 0;
  for (std::size_t k = 0; k + 1 < onsets.size(); ++k) {
    const std::size_t start = onsets[k];
    const std::size_t end = onsets[k + 1];
    while (run < clean.size() && clean[run].start <= start) ++run;
    // After coalescing, exactly one swing run lies between two stance onsets.
    if (run < clean.size() && clean[run].kind == PhaseKind::Swing && clean[run].start < end) {
      cycles.push_back({start, clean[run].start, end});
    }
  }
  if (cycles.empty()) throw Error(ErrorCode::NoCompleteCycle, "no cycle contains a swing");
  return cycles;
}

}  // namespace fesloop::gait_state
