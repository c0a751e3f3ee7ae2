#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fesloop/errors.hpp"
#include "fesloop/gait_state.hpp"
#include "fesloop/plant.hpp"

using namespace fesloop;
using namespace fesloop::gait_state;

namespace {

std::vector<ApSample> constant_velocity(double v_mm_s, std::size_t n = 10, double offset = 0.0) {
  std::vector<ApSample> h;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = 0.01 * static_cast<double>(k);
    h.push_back({t, offset + v_mm_s * t});
  }
  return h;
}

std::vector<PhaseKind> square_wave(std::size_t cycles, std::size_t stance, std::size_t swing) {
  std::vector<PhaseKind> s;
  for (std::size_t c = 0; c < cycles; ++c) {
    s.insert(s.end(), stance, PhaseKind::Stance);
    s.insert(s.end(), swing, PhaseKind::Swing);
  }
  return s;
}

struct WalkRun {
  std::vector<plant::TruthEvent> truth;
  std::vector<GaitEvent> detected;
  std::vector<PhaseKind> phases;
  std::vector<PhaseKind> causal;
};

// Unstimulated walker observed through its right PP2 and ASIS markers.
WalkRun walk(double speed, double seconds, double ap_offset = 0.0) {
  plant::Walker walker(plant::make_scenario(speed, 0.0, plant::Condition::FesOff, 0.25, 42));
  PhaseDetector detector(speed);
  WalkRun run;
  const auto steps = static_cast<std::size_t>(std::lround(seconds / 0.01));
  for (std::size_t k = 0; k < steps; ++k) {
    const auto out = walker.step({});
    const auto pp2 = *out.frame.get("R_PP2");
    const bool posterior = detect_mid_stance(pp2, out.frame.get("LASI"), out.frame.get("RASI"));
    run.causal.push_back(detector.update(out.frame.t, pp2.x() + ap_offset, posterior).kind);
  }
  for (const auto& e : walker.state().events) {
    if (e.leg == Leg::Right) run.truth.push_back(e);
  }
  run.detected = detector.events();
  run.phases = detector.localized_phases();
  return run;
}

double nearest_truth(const std::vector<plant::TruthEvent>& truth, EventKind kind, double t) {
  double best = 1e9;
  for (const auto& e : truth) {
    if (e.kind == kind) best = std::min(best, std::abs(e.t - t));
  }
  return best;
}

}  // namespace

TEST_CASE("detect_phase: foot carried by the belt is stance") {
  CHECK(detect_phase(constant_velocity(-700.0), 0.7, PhaseKind::Swing) == PhaseKind::Stance);
  CHECK(detect_phase(constant_velocity(-1200.0), 1.2, PhaseKind::Swing) == PhaseKind::Stance);
}

TEST_CASE("detect_phase: forward motion at 1 m/s is swing") {
  CHECK(detect_phase(constant_velocity(1000.0), 0.7, PhaseKind::Stance) == PhaseKind::Swing);
  CHECK(detect_phase(constant_velocity(1000.0), 1.2, PhaseKind::Stance) == PhaseKind::Swing);
}

TEST_CASE("detect_phase: the hysteresis band holds the previous state") {
  // 0.2 * 700 mm/s = 140 mm/s on either side.
  for (auto prev : {PhaseKind::Stance, PhaseKind::Swing}) {
    CHECK(detect_phase(constant_velocity(100.0), 0.7, prev) == prev);
    CHECK(detect_phase(constant_velocity(-100.0), 0.7, prev) == prev);
  }
  CHECK(detect_phase(constant_velocity(150.0), 0.7, PhaseKind::Stance) == PhaseKind::Swing);
  CHECK(detect_phase(constant_velocity(-150.0), 0.7, PhaseKind::Swing) == PhaseKind::Stance);
}

TEST_CASE("detect_phase: short history") {
  try {
    detect_phase(constant_velocity(1000.0, 3), 0.7);
    FAIL("expected InsufficientHistory");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientHistory);
  }
}

TEST_CASE("detect_phase: invariant to a constant AP offset") {
  for (double v : {-900.0, -100.0, 100.0, 900.0}) {
    for (auto prev : {PhaseKind::Stance, PhaseKind::Swing}) {
      CHECK(detect_phase(constant_velocity(v), 1.2, prev) == detect_phase(constant_velocity(v, 10, 5e4), 1.2, prev));
    }
  }
}

TEST_CASE("detect_mid_stance: boundaries") {
  const Vec3 lasi(1000, 120, 950), rasi(1000, -120, 950);
  CHECK_FALSE(detect_mid_stance(Vec3(1001, -90, 0), lasi, rasi));
  CHECK(detect_mid_stance(Vec3(950, -90, 0), lasi, rasi));
  try {
    detect_mid_stance(std::nullopt, lasi, rasi);
    FAIL("expected MissingMarker");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingMarker);
  }
}

TEST_CASE("segment_cycles: constructed periodicity") {
  const auto stream = square_wave(6, 72, 48);
  const auto cycles = segment_cycles(stream);
  // The leading stance run has no onset in the stream, so it is partial.
  REQUIRE(cycles.size() == 4);
  for (std::size_t i = 0; i < cycles.size(); ++i) {
    CHECK(cycles[i].end_sample - cycles[i].start_sample == 120);
    CHECK(cycles[i].toe_off_sample - cycles[i].start_sample == 72);
    if (i > 0) CHECK(cycles[i].start_sample == cycles[i - 1].end_sample);
  }
}

TEST_CASE("segment_cycles: a one-sample blip is debounced") {
  auto stream = square_wave(6, 72, 48);
  const auto before = segment_cycles(stream).size();
  stream[120 * 3 + 20] = PhaseKind::Swing;
  stream[120 * 4 + 90] = PhaseKind::Stance;
  const auto cycles = segment_cycles(stream);
  CHECK(cycles.size() == before);
  for (const auto& c : cycles) CHECK(c.end_sample - c.start_sample == 120);
}

TEST_CASE("segment_cycles: needs two stance onsets") {
  try {
    segment_cycles(square_wave(1, 72, 48));
    FAIL("expected NoCompleteCycle");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoCompleteCycle);
  }
}

TEST_CASE("DurationPredictor averages the last three swings") {
  DurationPredictor p(3, 0.4);
  CHECK(p.predict() == doctest::Approx(0.4));
  p.observe(0.3);
  CHECK(p.predict() == doctest::Approx(0.3));
  for (double d : {0.5, 0.6, 0.7}) p.observe(d);
  CHECK(p.predict() == doctest::Approx(0.6));
}

TEST_CASE("swing progress is monotone within a swing and resets at onset") {
  PhaseDetector d(0.7);
  double last = -1.0;
  bool in_swing = false;
  for (const auto& s : constant_velocity(-700.0, 40)) d.update(s.t, s.ap_mm);
  for (int k = 0; k < 30; ++k) {
    const auto ph = d.update(0.4 + 0.01 * k, -700.0 * 0.4 + 1000.0 * 0.01 * k);
    if (ph.swing()) {
      if (!in_swing) last = -1.0;
      CHECK(ph.swing_progress >= last);
      CHECK(ph.swing_progress <= 1.0);
      last = ph.swing_progress;
      in_swing = true;
    }
  }
  CHECK(in_swing);
}

TEST_CASE("plant walk: events within 30 ms of ground truth") {
  for (double speed : {0.7, 1.2}) {
    CAPTURE(speed);
    const auto run = walk(speed, 60.0);
    std::size_t toe_offs = 0, heel_strikes = 0;
    for (const auto& e : run.detected) {
      if (e.kind == EventKind::MidStance) continue;
      (e.kind == EventKind::ToeOff ? toe_offs : heel_strikes)++;
      CHECK(nearest_truth(run.truth, e.kind, e.t) <= 0.03 + 1e-9);
    }
    CHECK(toe_offs > 30);
    CHECK(heel_strikes > 30);
  }
}

TEST_CASE("plant walk: alternating transitions and plausible swing durations") {
  const auto run = walk(1.2, 120.0);
  const GaitEvent* prev = nullptr;
  for (const auto& e : run.detected) {
    if (e.kind == EventKind::MidStance) continue;
    if (prev) {
      CHECK(e.kind != prev->kind);
      if (prev->kind == EventKind::ToeOff) {
        CHECK(e.t - prev->t >= 0.1);
        CHECK(e.t - prev->t <= 2.0);
      }
    }
    prev = &e;
  }
}

TEST_CASE("plant walk: one mid-stance per cycle, between stance onset and toe-off") {
  const auto run = walk(0.7, 180.0);
  std::vector<double> heel, toe;
  for (const auto& e : run.truth) (e.kind == EventKind::HeelStrike ? heel : toe).push_back(e.t);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < heel.size(); ++i) {
    const auto next_toe = std::upper_bound(toe.begin(), toe.end(), heel[i]);
    if (next_toe == toe.end()) break;
    const std::size_t n = std::count_if(run.detected.begin(), run.detected.end(), [&](const GaitEvent& e) {
      return e.kind == EventKind::MidStance && e.t > heel[i] && e.t < *next_toe;
    });
    CHECK(n == 1);
    ++checked;
  }
  const std::size_t total = std::count_if(run.detected.begin(), run.detected.end(),
                                          [](const GaitEvent& e) { return e.kind == EventKind::MidStance; });
  CHECK(checked > 100);
  CHECK(total <= checked + 1);
}

TEST_CASE("plant walk: cycle count matches the plant within one") {
  const auto run = walk(1.2, 180.0);
  const auto cycles = segment_cycles(run.phases);
  const auto strikes = std::count_if(run.truth.begin(), run.truth.end(),
                                     [](const plant::TruthEvent& e) { return e.kind == EventKind::HeelStrike; });
  const long truth_cycles = static_cast<long>(strikes) - 1;
  CHECK(std::abs(static_cast<long>(cycles.size()) - truth_cycles) <= 1);
  for (std::size_t i = 1; i < cycles.size(); ++i) CHECK(cycles[i].start_sample == cycles[i - 1].end_sample);
}

TEST_CASE("plant walk: detection is invariant to an AP offset of the lab origin") {
  const auto a = walk(0.7, 20.0);
  const auto b = walk(0.7, 20.0, 3000.0);
  CHECK(a.causal == b.causal);
  CHECK(a.phases == b.phases);
}
