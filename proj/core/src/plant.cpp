#include "fesloop/plant.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "fesloop/errors.hpp"

namespace fesloop::plant {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMaskRamp = 0.15;       // swing fraction over which stimulation effect fades in/out
constexpr double kNoiseRamp = 0.06;      // cycle fraction of noise taper into stance
constexpr double kPitchPerActivation = 6.0;  // deg
constexpr double kBurnInSteps = 200;

std::size_t idx(Leg leg) { return static_cast<std::size_t>(leg); }

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

double wrap01(double x) { return x - std::floor(x); }

std::string format_number(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

// Within-cycle SD during swing (mm): rows speed {0.7, 1.2}, columns incline {-5, 0, +5}.
constexpr double kTable[4][2][3] = {
    {{11.8, 11.5, 9.2}, {15.6, 15.2, 11.8}},   // FES OFF
    {{11.0, 9.3, 10.1}, {16.1, 14.4, 13.3}},   // FES FD
    {{12.5, 12.2, 12.0}, {16.8, 15.8, 15.0}},  // FES OL
    {{11.8, 11.6, 11.6}, {16.7, 15.6, 15.0}},  // FES CL
};

// Stationary variance of the twice-filtered unit OU process at pole a.
double smooth_noise_variance(double a) {
  return (1.0 - a) * (1.0 - a) * (1.0 + a * a) / ((1.0 - a * a) * (1.0 - a * a));
}

void advance_noise(LegState& ls, Rng& rng, double dt, double tau) {
  const double a = std::exp(-dt / tau);
  ls.noise_fast = a * ls.noise_fast + std::sqrt(1.0 - a * a) * rng.normal();
  ls.noise_smooth = a * ls.noise_smooth + (1.0 - a) * ls.noise_fast;
}

double normalized_noise(const LegState& ls, double dt, double tau) {
  return ls.noise_smooth / std::sqrt(smooth_noise_variance(std::exp(-dt / tau)));
}

MarkerFrame pose_markers(const geometry::SoleCloud& cloud, const std::array<geometry::RigidTransform, 2>& poses,
                         double pelvis_ap, double t, double marker_noise, Rng& rng) {
  MarkerFrame frame;
  frame.t = t;
  auto jitter = [&]() -> Vec3 {
    if (marker_noise <= 0.0) return Vec3::Zero();
    const double x = rng.normal(), y = rng.normal(), z = rng.normal();
    return marker_noise * Vec3(x, y, z);
  };
  for (Leg leg : {Leg::Right, Leg::Left}) {
    for (const auto& [label, ref] : cloud.marker_refs) {
      frame.positions.emplace(leg_prefix(leg) + label, poses[idx(leg)].apply(ref) + jitter());
    }
  }
  frame.positions.emplace(std::string(marker_label::kLeftAsis),
                          Vec3(pelvis_ap, kAsisLateralMm, kAsisHeightMm) + jitter());
  frame.positions.emplace(std::string(marker_label::kRightAsis),
                          Vec3(pelvis_ap, -kAsisLateralMm, kAsisHeightMm) + jitter());
  return frame;
}

}  // namespace

void MuscleModel::validate() const {
  if (!(true_threshold_us > 0.0 && true_threshold_us < true_saturation_us)) {
    throw Error(ErrorCode::InvalidMuscle, "need 0 < true_threshold < true_saturation");
  }
  if (!(act_tau_s > 0.0 && deact_tau_s > 0.0)) throw Error(ErrorCode::InvalidMuscle, "time constants must be positive");
  if (!(max_force_n >= 0.0) || !std::isfinite(clearance_gain_mm)) {
    throw Error(ErrorCode::InvalidMuscle, "max force must be non-negative");
  }
}

MuscleModel MuscleModel::tibialis_anterior() { return {130.0, 590.0, 60.0, 0.04, 0.06, 20.0}; }

MuscleModel MuscleModel::gastrocnemius_soleus() { return {170.0, 600.0, 70.0, 0.04, 0.06, 130.0}; }

double recruitment(double pulse_width_us, const MuscleModel& m) {
  if (pulse_width_us <= m.true_threshold_us) return 0.0;
  if (pulse_width_us >= m.true_saturation_us) return 1.0;
  return (pulse_width_us - m.true_threshold_us) / (m.true_saturation_us - m.true_threshold_us);
}

double activation_step(double activation, double drive, const MuscleModel& m, double dt) {
  const double tau = drive > activation ? m.act_tau_s : m.deact_tau_s;
  const double next = drive + (activation - drive) * std::exp(-dt / tau);
  return std::clamp(next, 0.0, 1.0);
}

controllers::ForceProbe isometric_probe(const MuscleModel& m) {
  return [m](double pulse_width_us) {
    constexpr double kDt = 0.001;
    constexpr int kOnSteps = 1000;
    const double drive = recruitment(pulse_width_us, m);
    double a = 0.0;
    for (int i = 0; i < kOnSteps; ++i) a = activation_step(a, drive, m, kDt);
    return m.max_force_n * a;
  };
}

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::FesOff: return "FES_OFF";
    case Condition::FesFd: return "FES_FD";
    case Condition::FesOl: return "FES_OL";
    case Condition::FesCl: return "FES_CL";
  }
  throw Error(ErrorCode::InvalidCondition, "unknown condition value");
}

Condition parse_condition(std::string_view name) {
  if (name == "FES_OFF") return Condition::FesOff;
  if (name == "FES_FD") return Condition::FesFd;
  if (name == "FES_OL") return Condition::FesOl;
  if (name == "FES_CL") return Condition::FesCl;
  throw Error(ErrorCode::InvalidCondition, "unknown condition '" + std::string(name) + "'");
}

bool stimulates(Condition c) { return c != Condition::FesOff; }

Condition leg_condition(Condition c, Leg leg) {
  return c == Condition::FesCl && leg == Leg::Left ? Condition::FesOl : c;
}

double noise_model(double speed_mps, double incline_deg, Condition condition) {
  const auto row = static_cast<std::size_t>(condition);
  if (row > 3) throw Error(ErrorCode::InvalidCondition, "unknown condition value");
  const double fs = std::clamp((speed_mps - 0.7) / 0.5, 0.0, 1.0);
  const double inc = std::clamp(incline_deg, -5.0, 5.0);
  const std::size_t c0 = inc <= 0.0 ? 0 : 1;
  const double fi = (inc - (c0 == 0 ? -5.0 : 0.0)) / 5.0;
  auto at_speed = [&](std::size_t s) {
    return kTable[row][s][c0] + fi * (kTable[row][s][c0 + 1] - kTable[row][s][c0]);
  };
  return at_speed(0) + fs * (at_speed(1) - at_speed(0));
}

void PlantConfig::validate() const {
  for (const auto& leg : legs) {
    leg.ta.validate();
    leg.gs.validate();
  }
  if (noise.sd_override_mm && !(*noise.sd_override_mm >= 0.0)) {
    throw Error(ErrorCode::InvalidScenario, "noise SD override must be non-negative");
  }
  if (!(noise.correlation_time_s > 0.0)) throw Error(ErrorCode::InvalidScenario, "noise correlation time must be positive");
  if (!(noise.closed_loop_gain > 0.0)) throw Error(ErrorCode::InvalidScenario, "closed-loop noise gain must be positive");
  if (!(marker_noise_mm >= 0.0)) throw Error(ErrorCode::InvalidScenario, "marker noise must be non-negative");
  if (!(mtc_mm > 0.0 && mtc_mm < 40.0)) throw Error(ErrorCode::InvalidScenario, "template MTC must lie in (0, 40) mm");
}

void Scenario::validate() const {
  if (!(speed_mps > 0.0 && speed_mps <= 3.0)) throw Error(ErrorCode::InvalidScenario, "speed must lie in (0, 3] m/s");
  if (!(std::abs(incline_deg) <= 30.0)) throw Error(ErrorCode::InvalidScenario, "|incline| must be <= 30 deg");
  if (!(stim_probability >= 0.0 && stim_probability <= 1.0)) {
    throw Error(ErrorCode::InvalidScenario, "stimulation probability must lie in [0, 1]");
  }
  (void)to_string(condition);
  plant.validate();
}

bool Scenario::on_protocol_grid() const {
  const bool speed_ok = speed_mps == 0.7 || speed_mps == 1.2;
  const bool incline_ok = incline_deg == -5.0 || incline_deg == 0.0 || incline_deg == 5.0;
  return speed_ok && incline_ok && stim_probability == 0.25;
}

std::string Scenario::cell_id() const {
  return format_number(speed_mps) + "_" + format_number(incline_deg) + "_" + std::string(to_string(condition));
}

double Scenario::noise_sd_mm(Leg leg) const {
  if (!plant.noise.enabled) return 0.0;
  if (plant.noise.sd_override_mm) return *plant.noise.sd_override_mm;
  const Condition c = leg_condition(condition, leg);
  const double sd = noise_model(speed_mps, incline_deg, c);
  return c == Condition::FesCl ? plant.noise.closed_loop_gain * sd : sd;
}

Scenario make_scenario(double speed_mps, double incline_deg, Condition condition, double stim_probability,
                       std::uint64_t seed, PlantConfig plant) {
  Scenario s{speed_mps, incline_deg, condition, stim_probability, seed, std::move(plant)};
  s.validate();
  return s;
}

GateSequence::GateSequence(std::uint64_t seed, double probability)
    : rng_(derive_seed(seed, "gate")), probability_(probability) {}

bool GateSequence::fires(std::size_t cycle) {
  while (drawn_.size() <= cycle) drawn_.push_back(rng_.bernoulli(probability_));
  return drawn_[cycle];
}

PeriodicCurve::PeriodicCurve(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  slope_.assign(n, 0.0);
  // Secant into knot i from its periodic predecessor, and out of it.
  auto h = [&](std::size_t i) { return i + 1 < n ? x_[i + 1] - x_[i] : 1.0 + x_[0] - x_[i]; };
  auto delta = [&](std::size_t i) { return ((i + 1 < n ? y_[i + 1] : y_[0]) - y_[i]) / h(i); };
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t prev = i == 0 ? n - 1 : i - 1;
    const double d0 = delta(prev), d1 = delta(i);
    if (d0 * d1 <= 0.0) continue;
    const double h0 = h(prev), h1 = h(i);
    const double w1 = 2.0 * h1 + h0, w2 = h1 + 2.0 * h0;
    slope_[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
  }
}

double PeriodicCurve::operator()(double phase) const {
  const double p = wrap01(phase);
  const std::size_t n = x_.size();
  auto it = std::upper_bound(x_.begin(), x_.end(), p);
  std::size_t i = it == x_.begin() ? n - 1 : static_cast<std::size_t>(it - x_.begin()) - 1;
  const double x0 = x_[i];
  const double x1 = i + 1 < n ? x_[i + 1] : 1.0 + x_[0];
  const double y1 = i + 1 < n ? y_[i + 1] : y_[0];
  double local = p - x0;
  if (local < 0.0) local += 1.0;
  const double h = x1 - x0;
  const double s = local / h;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * y_[i] + (s3 - 2 * s2 + s) * h * slope_[i] + (-2 * s3 + 3 * s2) * y1 +
         (s3 - s2) * h * slope_[i + 1 < n ? i + 1 : 0];
}

GaitTemplate GaitTemplate::make(double speed_mps, double incline_deg, double mtc_mm) {
  GaitTemplate g;
  g.speed_ = speed_mps;
  g.incline_ = incline_deg;
  g.stride_ = std::clamp(0.9 + 0.6 * (speed_mps - 0.7), 0.5, 1.6);
  g.cycle_duration_ = g.stride_ / speed_mps;
  g.stance_fraction_ = std::clamp(0.62 - 0.04 * (speed_mps - 0.7), 0.55, 0.68);

  const double amp = (1.0 + 0.02 * incline_deg) * (1.0 + 0.2 * (speed_mps - 0.7));
  const double st = g.stance_fraction_;
  const double sw = 1.0 - st;
  g.clearance_ = PeriodicCurve({0.0, 0.08, st - 0.05, st, st + 0.2 * sw, st + 0.5 * sw, st + 0.85 * sw},
                               {8.0 * amp, -2.0, -2.0, 0.0, 55.0 * amp, mtc_mm * amp, 42.0 * amp});
  g.pitch_ = PeriodicCurve({0.0, 0.08, st - 0.15, st, st + 0.3 * sw, st + 0.7 * sw},
                           {8.0, 0.0, 0.0, -22.0, -5.0, 2.0});
  return g;
}

double GaitTemplate::swing_progress(double phase) const {
  const double p = wrap01(phase);
  if (p < stance_fraction_) return 0.0;
  return (p - stance_fraction_) / (1.0 - stance_fraction_);
}

double GaitTemplate::pp2_ap_mm(double phase) const {
  const double p = wrap01(phase);
  const double v = speed_ * 1000.0;
  const double travel = v * cycle_duration_ * stance_fraction_;
  if (p < stance_fraction_) return 0.5 * travel - v * p * cycle_duration_;
  const double s = swing_progress(p);
  return -0.5 * travel + travel * (s - 0.6 * std::sin(kTwoPi * s) / kTwoPi);
}

double GaitTemplate::pelvis_ap_mm(double phase) const { return 5.0 * std::sin(2.0 * kTwoPi * phase); }

double GaitTemplate::swing_mask(double phase) const {
  const double p = wrap01(phase);
  if (p < stance_fraction_) return 0.0;
  const double s = swing_progress(p);
  return smoothstep(std::min(s, 1.0 - s) / kMaskRamp);
}

double GaitTemplate::noise_mask(double phase) const {
  const double p = wrap01(phase);
  if (p >= stance_fraction_) return 1.0;
  const double d = std::min(stance_fraction_ - p, p);
  if (d >= kNoiseRamp) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * d / kNoiseRamp));
}

geometry::RigidTransform pose_foot(const geometry::SoleCloud& cloud, const geometry::GroundPlane& plane,
                                   double clearance_mm, double pitch_deg, double pp2_ap_mm, double lateral_mm) {
  const double beta = (plane.incline_deg + pitch_deg) * kDegToRad;
  geometry::RigidTransform pose;
  // Rotation about the lateral axis that lifts the toes for positive beta.
  pose.rotation << std::cos(beta), 0.0, -std::sin(beta), 0.0, 1.0, 0.0, std::sin(beta), 0.0, std::cos(beta);
  const double resting = geometry::toe_clearance(cloud, pose, plane).value;
  const Vec3 n = plane.normal();
  const Vec3 along = plane.along();
  const double lift = clearance_mm - resting;
  const Vec3 pp2 = pose.rotation * cloud.marker_refs.at(std::string(marker_label::kPP2));
  const double slide = (pp2_ap_mm - pp2.x() - lift * n.x()) / along.x();
  pose.translation = lift * n + slide * along + Vec3(0.0, lateral_mm, 0.0);
  return pose;
}

Walker::Walker(const Scenario& scenario, geometry::SoleCloud cloud)
    : scenario_(scenario),
      cloud_(std::move(cloud)),
      template_(GaitTemplate::make(scenario.speed_mps, scenario.incline_deg, scenario.plant.mtc_mm)),
      plane_{scenario.incline_deg, 0.0} {
  scenario_.validate();
  cloud_.validate();
  noise_sd_ = {scenario_.noise_sd_mm(Leg::Right), scenario_.noise_sd_mm(Leg::Left)};
  state_.legs[idx(Leg::Right)].phase = 0.0;
  state_.legs[idx(Leg::Left)].phase = 0.5;
  state_.noise_rng = {Rng(derive_seed(scenario_.seed, "noise/right")), Rng(derive_seed(scenario_.seed, "noise/left"))};
  state_.marker_rng = Rng(derive_seed(scenario_.seed, "markers"));
  const double tau = scenario_.plant.noise.correlation_time_s;
  for (Leg leg : {Leg::Right, Leg::Left}) {
    auto& ls = state_.legs[idx(leg)];
    for (int i = 0; i < kBurnInSteps; ++i) advance_noise(ls, state_.noise_rng[idx(leg)], 0.01, tau);
  }
}

PlantOutput Walker::step(const std::array<StimInput, 2>& stim, double dt) {
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidScenario, "plant step must be positive");
  const double t_prev = state_.t;
  // Snapped to 1 ns so that repeated steps do not drift off the sample grid.
  state_.t = std::nearbyint((t_prev + dt) * 1e9) / 1e9;
  const double period = template_.cycle_duration_s();
  const double st = template_.stance_fraction();
  const double tau = scenario_.plant.noise.correlation_time_s;

  PlantOutput out;
  std::array<geometry::RigidTransform, 2> poses;
  for (Leg leg : {Leg::Right, Leg::Left}) {
    const std::size_t i = idx(leg);
    LegState& ls = state_.legs[i];
    const LegMuscles& muscles = scenario_.plant.muscles(leg);

    const double before = ls.phase;
    double after = before + dt / period;
    if (before < st && after >= st) {
      state_.events.push_back({leg, gait_state::EventKind::ToeOff, t_prev + (st - before) * period});
    }
    if (after >= 1.0) {
      state_.events.push_back({leg, gait_state::EventKind::HeelStrike, t_prev + (1.0 - before) * period});
      after -= 1.0;
      ++ls.cycles;
    }
    ls.phase = after;

    ls.a_ta = activation_step(ls.a_ta, recruitment(stim[i].ta_us, muscles.ta), muscles.ta, dt);
    ls.a_gs = activation_step(ls.a_gs, recruitment(stim[i].gs_us, muscles.gs), muscles.gs, dt);
    advance_noise(ls, state_.noise_rng[i], dt, tau);

    const double mask = template_.swing_mask(ls.phase);
    const double base = template_.clearance_mm(ls.phase);
    const double effect = muscles.ta.clearance_gain_mm * ls.a_ta - muscles.gs.clearance_gain_mm * ls.a_gs;
    const double noise =
        noise_sd_[i] > 0.0 ? noise_sd_[i] * template_.noise_mask(ls.phase) * normalized_noise(ls, dt, tau) : 0.0;
    const double clearance = base + effect * mask + noise;
    const double pitch = template_.pitch_deg(ls.phase) + kPitchPerActivation * (ls.a_ta - ls.a_gs) * mask;
    const double lateral = leg == Leg::Right ? -kFootLateralMm : kFootLateralMm;
    poses[i] = pose_foot(cloud_, plane_, clearance, pitch, template_.pp2_ap_mm(ls.phase), lateral);

    LegTruth& truth = out.legs[i];
    truth.clearance_mm = clearance;
    truth.template_mm = base;
    truth.gs_force_n = muscles.gs.max_force_n * ls.a_gs;
    truth.phase = ls.phase;
    truth.in_swing = ls.phase >= st;
    truth.a_ta = ls.a_ta;
    truth.a_gs = ls.a_gs;
  }
  const double pelvis = template_.pelvis_ap_mm(state_.legs[idx(Leg::Right)].phase);
  out.frame = pose_markers(cloud_, poses, pelvis, state_.t, scenario_.plant.marker_noise_mm, state_.marker_rng);
  return out;
}

PlantOutput plant_step(Walker& walker, const std::array<StimInput, 2>& stim, double dt) {
  return walker.step(stim, dt);
}

std::vector<MarkerFrame> static_calibration_frames(const geometry::SoleCloud& cloud, double incline_deg,
                                                   double duration_s, double dt, double marker_noise_mm,
                                                   std::uint64_t seed) {
  const geometry::GroundPlane plane{incline_deg, 0.0};
  const std::array<geometry::RigidTransform, 2> poses{
      pose_foot(cloud, plane, 0.0, 0.0, 0.0, -kFootLateralMm),
      pose_foot(cloud, plane, 0.0, 0.0, 0.0, kFootLateralMm),
  };
  Rng rng(derive_seed(seed, "static"));
  std::vector<MarkerFrame> frames;
  const auto n = static_cast<std::size_t>(std::llround(duration_s / dt)) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    frames.push_back(pose_markers(cloud, poses, 0.0, static_cast<double>(k) * dt, marker_noise_mm, rng));
  }
  return frames;
}

}  // namespace fesloop::plant
