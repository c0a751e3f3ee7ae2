#pragma once

#include <array>
#include <cstddef>
#include <functional>

#include "fesloop/gait_state.hpp"

namespace fesloop::controllers {

inline constexpr double kAmplitudeMa = 25.0;
inline constexpr double kFrequencyHz = 25.0;
inline constexpr double kMaxPulseWidthUs = 1000.0;
inline constexpr double kIdentificationStepUs = 50.0;

struct StimCommand {
  double pulse_width_us = 0.0;
  double amplitude_ma = kAmplitudeMa;
  double frequency_hz = kFrequencyHz;
};

/// Threshold and maximum pulse widths found by the identification protocol.
struct MuscleCalib {
  double u_thr = 0.0;  // us
  double u_max = 0.0;  // us

  /// 0 < u_thr < u_max <= 1000, else InvalidCalib.
  void validate() const;
  bool on_identification_grid() const;
};

struct ControllerGains {
  double k_p = 25.0;  // us/mm
  double k_d = 0.7;   // us*s/mm
  double k_i = 1.0;   // us/(mm*s)

  void validate() const;
};

struct ClearanceThresholds {
  double c_min = 10.0;  // mm
  double c_thr = 25.0;  // mm

  void validate() const;
};

struct TrapezoidFractions {
  double ramp_up = 0.2;
  double plateau = 0.6;
  double ramp_down = 0.2;
};

struct TrapezoidProfile {
  double peak = 0.0;  // us
  TrapezoidFractions fractions;

  void validate() const;
};

struct ControllerConfig {
  ControllerGains gains;
  ClearanceThresholds thresholds;
  double rate_limit_us = 50.0;  // per control step
  double dt = 0.01;             // s
  TrapezoidFractions fractions;
  double amplitude_ma = kAmplitudeMa;
  double frequency_hz = kFrequencyHz;

  void validate() const;
};

/// Streaming state of the closed-loop law. The clearance derivative is the
/// backward difference at the control rate, averaged over the last 3 steps.
struct ClosedLoopState {
  double integral = 0.0;        // mm*s, integral of e_min while c < c_min
  double prev_clearance = 0.0;  // mm
  double prev_output = 0.0;     // us
  bool in_swing = false;
  double filtered_velocity = 0.0;  // mm/s

  std::array<double, 3> recent_velocity{};
  std::size_t velocity_count = 0;

  /// Resets the derivative estimator and integral at swing onset.
  void reset_for_swing(double clearance, double seed_output);
  void observe(double clearance, double dt);
};

/// TA peak for the open-loop corrective trapezoid: midway between threshold and maximum.
double ta_peak_from_calib(const MuscleCalib& calib);

/// Piecewise-linear trapezoid over a window; progress is clamped to [0,1].
double open_loop_output(const TrapezoidProfile& profile, double window_progress);

/// The three-region toe-clearance law with e_min = c_min - c, e_thr = c_thr - c
/// and de/dt = -dc/dt. Region boundaries belong to the upper region.
double closed_loop_law(double clearance, double clearance_rate, double integral,
                       const ControllerGains& gains, const ClearanceThresholds& thr);

/// Evaluates the law from `state` (filtered velocity, integral) and then
/// advances the integral by e_min*dt when c < c_min. Does not touch the
/// velocity estimator; see ClosedLoopState::observe.
double closed_loop_raw(double clearance, ClosedLoopState& state, const ControllerGains& gains,
                       const ClearanceThresholds& thr, double dt);

/// Saturates to [u_thr, u_max].
double clamp_output(double u_raw, const MuscleCalib& calib);

double rate_limit(double prev, double cmd, double max_step = 50.0);

struct ClosedLoopStep {
  StimCommand command;
  ClosedLoopState state;
};

/// One control tick. Swing entry resets the integral and seeds the previous
/// output at u_thr; in swing the command is rate_limit(clamp(raw)); in stance
/// the output is 0 and the drop is not rate limited.
ClosedLoopStep controller_step(double clearance, const gait_state::GaitPhase& phase,
                               const ClosedLoopState& state, const ControllerConfig& config,
                               const MuscleCalib& calib);

/// Owning wrapper around controller_step for one leg.
class ClosedLoopController {
 public:
  ClosedLoopController(ControllerConfig config, MuscleCalib calib);

  StimCommand step(double clearance, const gait_state::GaitPhase& phase);
  const ClosedLoopState& state() const { return state_; }
  const MuscleCalib& calib() const { return calib_; }

 private:
  ControllerConfig config_;
  MuscleCalib calib_;
  ClosedLoopState state_;
};

/// Trapezoid played over a gait window whose length is predicted from the
/// last three windows. Used for the corrective TA channel (window = swing) and
/// the foot-drop GS channel (window = mid-stance to heel strike).
class OpenLoopChannel {
 public:
  OpenLoopChannel(TrapezoidProfile profile, double rate_limit_us, double initial_window_s,
                  std::size_t history = 3);

  /// `enabled` is latched when a window opens; windows always feed the
  /// duration predictor, enabled or not.
  StimCommand step(bool in_window, bool enabled, double dt);

  const TrapezoidProfile& profile() const { return profile_; }
  double predicted_window() const { return durations_.predict(); }

 private:
  TrapezoidProfile profile_;
  double rate_limit_;
  gait_state::DurationPredictor durations_;
  bool in_window_ = false;
  bool enabled_ = false;
  double elapsed_ = 0.0;
  double prev_output_ = 0.0;
};

/// Steady isometric force (N) produced by a pulse width (us).
using ForceProbe = std::function<double(double)>;

struct IdentificationConfig {
  double step_us = kIdentificationStepUs;
  double force_threshold_n = 1.0;      // "measurable" force
  double saturation_tolerance_n = 0.5; // per-step increase below this means saturated
  double discomfort_cap_us = 800.0;
};

/// Incremental identification: raise the pulse width in fixed steps; u_thr
/// is the first step with measurable force, u_max the last step before the
/// force stops increasing (or the discomfort cap, whichever is lower).
MuscleCalib identify_calibration(const ForceProbe& probe, const IdentificationConfig& cfg = {});

/// Initial foot-drop profile: peak one identification step above u_thr.
TrapezoidProfile gs_foot_drop_profile(const MuscleCalib& calib, TrapezoidFractions fractions = {});

struct FootDropTuning {
  TrapezoidProfile profile;
  double force_n = 0.0;
};

/// Escalates the foot-drop peak in identification steps until the probed
/// plantarflexion force reaches `min_force_n` (stops at u_max).
FootDropTuning tune_foot_drop_peak(const MuscleCalib& calib, const ForceProbe& probe,
                                   TrapezoidFractions fractions = {}, double min_force_n = 10.0,
                                   double step_us = kIdentificationStepUs);

}  // namespace fesloop::controllers
