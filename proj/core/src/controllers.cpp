#include "fesloop/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "fesloop/errors.hpp"

namespace fesloop::controllers {

void MuscleCalib::validate() const {
  if (!(std::isfinite(u_thr) && std::isfinite(u_max) && u_thr > 0.0 && u_thr < u_max &&
        u_max <= kMaxPulseWidthUs)) {
    throw Error(ErrorCode::InvalidCalib, "need 0 < u_thr < u_max <= 1000 us (got " +
                                             std::to_string(u_thr) + ", " + std::to_string(u_max) + ")");
  }
}

bool MuscleCalib::on_identification_grid() const {
  return std::fmod(u_thr, kIdentificationStepUs) == 0.0 && std::fmod(u_max, kIdentificationStepUs) == 0.0;
}

void ControllerGains::validate() const {
  if (!(k_p >= 0.0 && k_d >= 0.0 && k_i >= 0.0)) {
    throw Error(ErrorCode::ConfigError, "controller gains must be non-negative");
  }
}

void ClearanceThresholds::validate() const {
  if (!(c_min > 0.0 && c_min < c_thr)) {
    throw Error(ErrorCode::ConfigError, "need 0 < c_min < c_thr");
  }
}

void TrapezoidProfile::validate() const {
  const auto& f = fractions;
  if (f.ramp_up < 0.0 || f.plateau < 0.0 || f.ramp_down < 0.0 ||
      std::abs(f.ramp_up + f.plateau + f.ramp_down - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidProfile, "trapezoid fractions must be non-negative and sum to 1");
  }
  if (!(peak >= 0.0 && peak <= kMaxPulseWidthUs)) {
    throw Error(ErrorCode::InvalidProfile, "trapezoid peak outside [0, 1000] us");
  }
}

void ControllerConfig::validate() const {
  gains.validate();
  thresholds.validate();
  if (!(rate_limit_us > 0.0)) throw Error(ErrorCode::ConfigError, "rate limit must be positive");
  if (!(dt > 0.0)) throw Error(ErrorCode::NonPositiveDt, "control period must be positive");
  TrapezoidProfile{0.0, fractions}.validate();
  if (!(amplitude_ma > 0.0 && frequency_hz > 0.0)) {
    throw Error(ErrorCode::ConfigError, "amplitude and frequency must be positive");
  }
}

void ClosedLoopState::reset_for_swing(double clearance, double seed_output) {
  integral = 0.0;
  prev_clearance = clearance;
  prev_output = seed_output;
  filtered_velocity = 0.0;
  recent_velocity = {};
  velocity_count = 0;
  in_swing = true;
}

void ClosedLoopState::observe(double clearance, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::NonPositiveDt, "dt must be positive");
  const double diff = (clearance - prev_clearance) / dt;
  prev_clearance = clearance;
  recent_velocity[velocity_count % recent_velocity.size()] = diff;
  ++velocity_count;
  const std::size_t n = std::min(velocity_count, recent_velocity.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += recent_velocity[i];
  filtered_velocity = sum / static_cast<double>(n);
}

double ta_peak_from_calib(const MuscleCalib& calib) {
  calib.validate();
  return calib.u_thr + (calib.u_max - calib.u_thr) / 2.0;
}

double open_loop_output(const TrapezoidProfile& profile, double window_progress) {
  const double p = std::clamp(window_progress, 0.0, 1.0);
  const auto& f = profile.fractions;
  const double up_end = f.ramp_up;
  const double plateau_end = f.ramp_up + f.plateau;
  if (p < up_end) return profile.peak * (p / f.ramp_up);
  if (p <= plateau_end) return profile.peak;
  if (f.ramp_down <= 0.0) return p < 1.0 ? profile.peak : 0.0;
  return profile.peak * std::max(0.0, (1.0 - p) / f.ramp_down);
}

double closed_loop_law(double clearance, double clearance_rate, double integral,
                       const ControllerGains& gains, const ClearanceThresholds& thr) {
  const double e_min = thr.c_min - clearance;
  // e_min and e_thr differ by a constant, so both derivatives are -dc/dt.
  const double e_rate = -clearance_rate;
  if (clearance < thr.c_min) return gains.k_p * e_min + gains.k_d * e_rate + gains.k_i * integral;
  if (clearance < thr.c_thr) return gains.k_d * std::max(0.0, e_rate);
  return 0.0;
}

double closed_loop_raw(double clearance, ClosedLoopState& state, const ControllerGains& gains,
                       const ClearanceThresholds& thr, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::NonPositiveDt, "dt must be positive");
  const double u = closed_loop_law(clearance, state.filtered_velocity, state.integral, gains, thr);
  if (clearance < thr.c_min) state.integral += (thr.c_min - clearance) * dt;
  return u;
}

double clamp_output(double u_raw, const MuscleCalib& calib) {
  if (u_raw < calib.u_thr) return calib.u_thr;
  if (u_raw > calib.u_max) return calib.u_max;
  return u_raw;
}

double rate_limit(double prev, double cmd, double max_step) {
  return prev + std::clamp(cmd - prev, -max_step, max_step);
}

ClosedLoopStep controller_step(double clearance, const gait_state::GaitPhase& phase,
                               const ClosedLoopState& state, const ControllerConfig& config,
                               const MuscleCalib& calib) {
  ClosedLoopStep out{StimCommand{0.0, config.amplitude_ma, config.frequency_hz}, state};
  ClosedLoopState& s = out.state;
  if (!phase.swing()) {
    s.in_swing = false;
    s.prev_output = 0.0;
    s.prev_clearance = clearance;
    return out;
  }
  if (!s.in_swing) {
    s.reset_for_swing(clearance, calib.u_thr);
  } else {
    s.observe(clearance, config.dt);
  }
  const double raw = closed_loop_raw(clearance, s, config.gains, config.thresholds, config.dt);
  const double cmd = rate_limit(s.prev_output, clamp_output(raw, calib), config.rate_limit_us);
  s.prev_output = cmd;
  out.command.pulse_width_us = cmd;
  return out;
}

ClosedLoopController::ClosedLoopController(ControllerConfig config, MuscleCalib calib)
    : config_(config), calib_(calib) {
  config_.validate();
  calib_.validate();
}

StimCommand ClosedLoopController::step(double clearance, const gait_state::GaitPhase& phase) {
  auto next = controller_step(clearance, phase, state_, config_, calib_);
  state_ = next.state;
  return next.command;
}

OpenLoopChannel::OpenLoopChannel(TrapezoidProfile profile, double rate_limit_us, double initial_window_s,
                                 std::size_t history)
    : profile_(profile), rate_limit_(rate_limit_us), durations_(history, initial_window_s) {
  profile_.validate();
}

StimCommand OpenLoopChannel::step(bool in_window, bool enabled, double dt) {
  StimCommand cmd;
  if (!in_window) {
    if (in_window_) durations_.observe(elapsed_ + dt);
    in_window_ = false;
    prev_output_ = 0.0;
    return cmd;
  }
  if (!in_window_) {
    in_window_ = true;
    enabled_ = enabled;
    elapsed_ = 0.0;
  } else {
    elapsed_ += dt;
  }
  if (!enabled_) {
    prev_output_ = 0.0;
    return cmd;
  }
  const double target = open_loop_output(profile_, elapsed_ / durations_.predict());
  prev_output_ = rate_limit(prev_output_, target, rate_limit_);
  cmd.pulse_width_us = prev_output_;
  return cmd;
}

MuscleCalib identify_calibration(const ForceProbe& probe, const IdentificationConfig& cfg) {
  if (!(cfg.step_us > 0.0)) throw Error(ErrorCode::ConfigError, "identification step must be positive");
  const double cap = std::floor(std::min(cfg.discomfort_cap_us, kMaxPulseWidthUs) / cfg.step_us) * cfg.step_us;

  std::optional<double> u_thr;
  double prev_force = 0.0;
  for (double u = cfg.step_us; u <= kMaxPulseWidthUs + 1e-9; u += cfg.step_us) {
    const double force = probe(u);
    if (!u_thr) {
      if (force >= cfg.force_threshold_n) u_thr = u;
    } else {
      if (u > cap) return {*u_thr, std::max(cap, *u_thr + cfg.step_us)};
      if (force - prev_force < cfg.saturation_tolerance_n) {
        return {*u_thr, std::max(u - cfg.step_us, *u_thr + cfg.step_us)};
      }
    }
    prev_force = force;
  }
  if (!u_thr) throw Error(ErrorCode::NoThresholdFound, "no measurable force up to 1000 us");
  return {*u_thr, std::max(cap, *u_thr + cfg.step_us)};
}

TrapezoidProfile gs_foot_drop_profile(const MuscleCalib& calib, TrapezoidFractions fractions) {
  calib.validate();
  TrapezoidProfile profile{std::min(calib.u_thr + kIdentificationStepUs, kMaxPulseWidthUs), fractions};
  profile.validate();
  return profile;
}

FootDropTuning tune_foot_drop_peak(const MuscleCalib& calib, const ForceProbe& probe,
                                   TrapezoidFractions fractions, double min_force_n, double step_us) {
  FootDropTuning out{gs_foot_drop_profile(calib, fractions), 0.0};
  out.force_n = probe(out.profile.peak);
  while (out.force_n < min_force_n && out.profile.peak + step_us <= calib.u_max) {
    out.profile.peak += step_us;
    out.force_n = probe(out.profile.peak);
  }
  return out;
}

}  // namespace fesloop::controllers
