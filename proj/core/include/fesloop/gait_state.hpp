#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "fesloop/markers.hpp"

namespace fesloop::gait_state {

enum class PhaseKind { Stance, Swing };

struct GaitPhase {
  PhaseKind kind = PhaseKind::Stance;
  bool mid_stance_reached = false;  // meaningful in stance only
  double swing_progress = 0.0;      // [0,1], meaningful in swing only

  bool swing() const { return kind == PhaseKind::Swing; }
  bool stance() const { return kind == PhaseKind::Stance; }
};

struct CycleIndex {
  std::size_t start_sample = 0;
  std::size_t toe_off_sample = 0;
  std::size_t end_sample = 0;
};

struct ApSample {
  double t = 0.0;      // s
  double ap_mm = 0.0;  // anterior-posterior position of PP2
};

struct DetectorConfig {
  double threshold_fraction = 0.2;       // v_on = -v_off = fraction * belt speed
  std::size_t velocity_window = 5;       // backward differences averaged
  double min_phase_duration_s = 0.1;     // debounce
  double max_swing_duration_s = 2.0;
  std::size_t swing_history = 3;         // swings averaged for progress
  double initial_swing_duration_s = 0.4;
  std::size_t event_lookback = 12;       // samples searched when localizing an event
};

/// Smoothed AP velocity (mm/s): mean of the last `window` backward differences.
double smoothed_ap_velocity(std::span<const ApSample> history, std::size_t window = 5);

/// Hysteresis classifier on the smoothed PP2 velocity. Between the two
/// thresholds the previous state is held. Throws InsufficientHistory when the
/// history spans less than 0.05 s (or has fewer than window+1 samples).
PhaseKind detect_phase(std::span<const ApSample> history, double belt_speed_mps,
                       PhaseKind previous = PhaseKind::Stance, const DetectorConfig& cfg = {});

/// True when PP2 is posterior to the midpoint of the two ASIS markers.
bool detect_mid_stance(const std::optional<Vec3>& pp2, const std::optional<Vec3>& asis_left,
                       const std::optional<Vec3>& asis_right);

/// Trailing mean of the last N observed durations.
class DurationPredictor {
 public:
  DurationPredictor(std::size_t history, double initial_s);

  void observe(double duration_s);
  double predict() const;

 private:
  std::size_t history_;
  double initial_;
  std::deque<double> recent_;
};

enum class EventKind { ToeOff, HeelStrike, MidStance };

struct GaitEvent {
  EventKind kind;
  std::size_t sample;  // first sample belonging to the new phase
  double t;            // localized event time
};

/// Streaming per-leg phase detector. Single owner; feed one sample per frame.
class PhaseDetector {
 public:
  explicit PhaseDetector(double belt_speed_mps, DetectorConfig cfg = {});

  /// `posterior_of_pelvis` is the mid-stance test for this frame, if the
  /// markers were visible. Returns the causal phase estimate.
  GaitPhase update(double t, double pp2_ap_mm, std::optional<bool> posterior_of_pelvis = std::nullopt);

  const GaitPhase& phase() const { return phase_; }
  std::size_t samples() const { return count_; }

  /// Transitions, localized at the sign change of the raw velocity that
  /// preceded the thresholded switch.
  const std::vector<GaitEvent>& events() const { return events_; }

  /// True on the update that switched stance -> swing / swing -> stance /
  /// raised the mid-stance latch.
  bool swing_started() const { return swing_started_; }
  bool stance_started() const { return stance_started_; }
  bool mid_stance_started() const { return mid_stance_started_; }

  double predicted_swing_duration() const { return swing_durations_.predict(); }

  /// Per-sample phases rebuilt from the localized events; input for segment_cycles.
  std::vector<PhaseKind> localized_phases() const;

 private:
  void switch_to(PhaseKind kind, double t);
  std::size_t localize(PhaseKind kind) const;

  double belt_speed_;
  DetectorConfig cfg_;
  std::deque<ApSample> history_;
  std::size_t count_ = 0;
  GaitPhase phase_;
  double phase_start_t_ = 0.0;
  bool have_phase_start_ = false;
  DurationPredictor swing_durations_;
  std::vector<GaitEvent> events_;
  bool swing_started_ = false;
  bool stance_started_ = false;
  bool mid_stance_started_ = false;
};

/// Splits a per-sample phase stream into stance-onset-to-stance-onset cycles
/// after removing phase runs shorter than `min_phase_duration_s`.
/// Throws NoCompleteCycle when fewer than two stance onsets remain.
std::vector<CycleIndex> segment_cycles(std::span<const PhaseKind> phase_stream,
                                       double sample_rate_hz = 100.0,
                                       double min_phase_duration_s = 0.1);

}  // namespace fesloop::gait_state
