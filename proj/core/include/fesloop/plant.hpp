#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fesloop/controllers.hpp"
#include "fesloop/gait_state.hpp"
#include "fesloop/geometry.hpp"
#include "fesloop/markers.hpp"
#include "fesloop/rng.hpp"

namespace fesloop::plant {

/// Stand-in for one stimulated muscle: linear recruitment between a true
/// threshold and saturation, first-order activation, and a clearance effect
/// during swing (positive for TA, subtracted for GS).
struct MuscleModel {
  double true_threshold_us = 130.0;
  double true_saturation_us = 590.0;
  double max_force_n = 60.0;
  double act_tau_s = 0.04;
  double deact_tau_s = 0.06;
  double clearance_gain_mm = 20.0;  // mm per unit activation

  void validate() const;

  static MuscleModel tibialis_anterior();
  static MuscleModel gastrocnemius_soleus();
};

double recruitment(double pulse_width_us, const MuscleModel& m);
double activation_step(double activation, double drive, const MuscleModel& m, double dt);

/// Isometric dynamometer trial: 1 s of stimulation from rest, then the
/// steady force is read. The 5 s break lets activation return to rest, so
/// every trial starts from zero.
controllers::ForceProbe isometric_probe(const MuscleModel& m);

enum class Condition { FesOff, FesFd, FesOl, FesCl };

std::string_view to_string(Condition c);
/// Accepts FES_OFF, FES_FD, FES_OL, FES_CL; throws InvalidCondition otherwise.
Condition parse_condition(std::string_view name);
bool stimulates(Condition c);

/// Condition experienced by one leg: in FES_CL the left leg runs the
/// open-loop controller, so it is an FES_OL leg.
Condition leg_condition(Condition c, Leg leg);

/// Target within-cycle clearance SD (mm) for a condition; protocol grid values
/// are taken verbatim, other speeds/inclines are linearly interpolated and clamped.
double noise_model(double speed_mps, double incline_deg, Condition condition);

struct NoiseConfig {
  bool enabled = true;
  std::optional<double> sd_override_mm;
  double correlation_time_s = 0.1;
  /// Extra noise on a closed-loop leg. The controller absorbs part of the
  /// disturbance, so without it the measured SD lands ~10 % under target.
  double closed_loop_gain = 1.1;
};

struct LegMuscles {
  MuscleModel ta = MuscleModel::tibialis_anterior();
  MuscleModel gs = MuscleModel::gastrocnemius_soleus();
};

struct PlantConfig {
  std::array<LegMuscles, 2> legs{};  // indexed by Leg
  NoiseConfig noise;
  double marker_noise_mm = 0.0;
  double mtc_mm = 20.0;  // unstimulated mid-swing minimum of the template

  const LegMuscles& muscles(Leg leg) const { return legs[static_cast<std::size_t>(leg)]; }
  void validate() const;
};

struct Scenario {
  double speed_mps = 0.7;
  double incline_deg = 0.0;
  Condition condition = Condition::FesOff;
  double stim_probability = 0.25;
  /// Identifies the walking realization (noise and gate streams). Cells that
  /// share a seed are matched: they differ only in the stimulation applied.
  std::uint64_t seed = 0;
  PlantConfig plant;

  void validate() const;
  /// True when speed, incline and probability are the experiment's values.
  bool on_protocol_grid() const;
  /// "<speed>_<incline>_<condition>", e.g. "0.7_-5_FES_CL".
  std::string cell_id() const;
  /// Noise SD for one leg, from the condition that leg experiences.
  double noise_sd_mm(Leg leg = Leg::Right) const;
};

Scenario make_scenario(double speed_mps, double incline_deg, Condition condition,
                       double stim_probability = 0.25, std::uint64_t seed = 0, PlantConfig plant = {});

/// Per-cycle Bernoulli gate for targeted stimulation, drawn from its own
/// seeded stream. fires(k) is a pure function of (seed, p, k).
class GateSequence {
 public:
  GateSequence(std::uint64_t seed, double probability);

  bool fires(std::size_t cycle);

 private:
  Rng rng_;
  double probability_;
  std::vector<bool> drawn_;
};

/// Periodic monotone cubic (Fritsch-Butland) through knots on [0,1).
class PeriodicCurve {
 public:
  PeriodicCurve() = default;
  PeriodicCurve(std::vector<double> x, std::vector<double> y);

  double operator()(double phase) const;

 private:
  std::vector<double> x_, y_, slope_;
};

/// Unstimulated walking pattern for one speed/incline.
class GaitTemplate {
 public:
  static GaitTemplate make(double speed_mps, double incline_deg, double mtc_mm = 20.0);

  double speed_mps() const { return speed_; }
  double incline_deg() const { return incline_; }
  double cycle_duration_s() const { return cycle_duration_; }
  double stride_length_m() const { return stride_; }
  double stance_fraction() const { return stance_fraction_; }
  /// (toe-off fraction, heel-strike fraction); cycles start at heel strike.
  std::pair<double, double> swing_window() const { return {stance_fraction_, 1.0}; }

  double swing_progress(double phase) const;
  double clearance_mm(double phase) const { return clearance_(phase); }
  double pitch_deg(double phase) const { return pitch_(phase); }
  double pp2_ap_mm(double phase) const;
  double pelvis_ap_mm(double phase) const;
  /// Where stimulation acts on clearance: 0 in stance, smooth rise to 1 in swing.
  double swing_mask(double phase) const;
  /// Noise envelope: 1 in swing, tapering to 0 in mid-stance.
  double noise_mask(double phase) const;

 private:
  double speed_ = 0.7;
  double incline_ = 0.0;
  double cycle_duration_ = 1.0;
  double stride_ = 0.9;
  double stance_fraction_ = 0.62;
  PeriodicCurve clearance_;
  PeriodicCurve pitch_;
};

struct StimInput {
  double ta_us = 0.0;
  double gs_us = 0.0;
};

struct LegState {
  double phase = 0.0;  // cycle fraction in [0,1)
  double a_ta = 0.0;
  double a_gs = 0.0;
  double noise_fast = 0.0;
  double noise_smooth = 0.0;
  std::size_t cycles = 0;  // completed heel strikes
};

struct TruthEvent {
  Leg leg;
  gait_state::EventKind kind;
  double t;
};

struct PlantState {
  double t = 0.0;
  std::array<LegState, 2> legs{};
  std::array<Rng, 2> noise_rng{Rng(0), Rng(0)};
  Rng marker_rng;
  std::vector<TruthEvent> events;
};

struct LegTruth {
  double clearance_mm = 0.0;
  double template_mm = 0.0;
  double gs_force_n = 0.0;
  double phase = 0.0;
  bool in_swing = false;
  double a_ta = 0.0;
  double a_gs = 0.0;
};

struct PlantOutput {
  MarkerFrame frame;
  std::array<LegTruth, 2> legs{};
};

/// Poses the sole so that its clearance above `plane` is exactly
/// `clearance_mm`, its pitch relative to the plane is `pitch_deg`, and PP2
/// lands at `pp2_ap_mm` along the lab x axis.
geometry::RigidTransform pose_foot(const geometry::SoleCloud& cloud, const geometry::GroundPlane& plane,
                                   double clearance_mm, double pitch_deg, double pp2_ap_mm,
                                   double lateral_mm);

/// Lateral offsets of the shoes and ASIS markers in the lab frame.
inline constexpr double kFootLateralMm = 90.0;
inline constexpr double kAsisLateralMm = 120.0;
inline constexpr double kAsisHeightMm = 950.0;

/// Synthetic walker on a treadmill. Owns its state; stepped sequentially.
class Walker {
 public:
  explicit Walker(const Scenario& scenario, geometry::SoleCloud cloud = geometry::make_default_sole_cloud());

  PlantOutput step(const std::array<StimInput, 2>& stim, double dt = 0.01);

  const PlantState& state() const { return state_; }
  const GaitTemplate& gait() const { return template_; }
  const Scenario& scenario() const { return scenario_; }
  const geometry::SoleCloud& cloud() const { return cloud_; }
  /// The treadmill surface in the lab frame (passes through the origin).
  const geometry::GroundPlane& plane() const { return plane_; }
  double noise_sd_mm(Leg leg) const { return noise_sd_[static_cast<std::size_t>(leg)]; }

 private:
  Scenario scenario_;
  geometry::SoleCloud cloud_;
  GaitTemplate template_;
  geometry::GroundPlane plane_;
  std::array<double, 2> noise_sd_{};
  PlantState state_;
};

/// Free-function form of Walker::step.
PlantOutput plant_step(Walker& walker, const std::array<StimInput, 2>& stim, double dt = 0.01);

/// Static recording of both unloaded shoes resting flat on a treadmill
/// tilted by `incline_deg` (zero clearance by construction).
std::vector<MarkerFrame> static_calibration_frames(const geometry::SoleCloud& cloud, double incline_deg,
                                                   double duration_s = 1.0, double dt = 0.01,
                                                   double marker_noise_mm = 0.0, std::uint64_t seed = 0);

}  // namespace fesloop::plant
