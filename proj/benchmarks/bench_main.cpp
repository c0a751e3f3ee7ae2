#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "fesloop/analysis.hpp"
#include "fesloop/controllers.hpp"
#include "fesloop/geometry.hpp"
#include "fesloop/plant.hpp"
#include "fesloop/rng.hpp"
#include "fesloop/session.hpp"

using namespace fesloop;

namespace {

void BM_ControllerStep(benchmark::State& st) {
  const controllers::ControllerConfig cfg;
  const controllers::MuscleCalib calib{150.0, 600.0};
  controllers::ClosedLoopState state;
  gait_state::GaitPhase swing;
  swing.kind = gait_state::PhaseKind::Swing;
  double t = 0.0;
  for (auto _ : st) {
    const double c = 5.0 + 20.0 * std::sin(t);
    auto out = controllers::controller_step(c, swing, state, cfg, calib);
    state = out.state;
    benchmark::DoNotOptimize(out.command.pulse_width_us);
    t += 0.05;
  }
}
BENCHMARK(BM_ControllerStep);

void BM_ToeClearance(benchmark::State& st) {
  const auto cloud = geometry::make_default_sole_cloud();
  const geometry::GroundPlane plane{5.0, 0.0};
  const auto pose = plant::pose_foot(cloud, plane, 12.0, -8.0, 100.0, -90.0);
  for (auto _ : st) benchmark::DoNotOptimize(geometry::toe_clearance(cloud, pose, plane).value);
}
BENCHMARK(BM_ToeClearance);

void BM_MeasureClearance(benchmark::State& st) {
  const auto cloud = geometry::make_default_sole_cloud();
  const geometry::GroundPlane plane{0.0, 0.0};
  const auto pose = plant::pose_foot(cloud, plane, 12.0, -8.0, 100.0, -90.0);
  LabeledPoints observed;
  for (const auto& [label, p] : cloud.marker_refs) observed[label] = pose.apply(p);
  for (auto _ : st) benchmark::DoNotOptimize(geometry::measure_clearance(cloud, observed, plane));
}
BENCHMARK(BM_MeasureClearance);

// Cycles per group, 101 points, 10000 relabelings.
void BM_PermutationTest(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  Rng rng(3);
  std::vector<std::vector<double>> a(n, std::vector<double>(101)), b = a;
  for (auto* g : {&a, &b}) {
    for (auto& row : *g) {
      for (auto& v : row) v = rng.normal();
    }
  }
  for (auto _ : st) benchmark::DoNotOptimize(analysis::permutation_test(a, b).p_values);
}
BENCHMARK(BM_PermutationTest)->Arg(20)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_PlantStep(benchmark::State& st) {
  plant::Walker walker(plant::make_scenario(1.2, 0.0, plant::Condition::FesCl, 0.25, 7));
  const std::array<plant::StimInput, 2> stim{plant::StimInput{300.0, 0.0}, plant::StimInput{}};
  for (auto _ : st) benchmark::DoNotOptimize(walker.step(stim));
}
BENCHMARK(BM_PlantStep);

// One minute of walking through the whole loop.
void BM_SimulateCell(benchmark::State& st) {
  const auto calib = session::calibrate(plant::PlantConfig{});
  session::SessionConfig cfg;
  cfg.duration_s = 60.0;
  const auto scenario = plant::make_scenario(0.7, 0.0, plant::Condition::FesCl, 0.25, 7);
  for (auto _ : st) benchmark::DoNotOptimize(session::simulate_cell(scenario, calib, cfg));
}
BENCHMARK(BM_SimulateCell)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
