#include <doctest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>

#include "fesloop/errors.hpp"
#include "fesloop/geometry.hpp"
#include "fesloop/plant.hpp"
#include "fesloop/rng.hpp"

using namespace fesloop;
using namespace fesloop::geometry;

namespace {

Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

LabeledPoints transformed(const LabeledPoints& pts, const Mat3& r, const Vec3& t) {
  LabeledPoints out;
  for (const auto& [k, p] : pts) out.emplace(k, r * p + t);
  return out;
}

// Oracle written against the plane definition directly: n = (-sin a, 0, cos a).
double brute_force_clearance(const SoleCloud& cloud, const RigidTransform& pose, double incline_deg,
                             double offset) {
  const double a = incline_deg * std::numbers::pi / 180.0;
  const Vec3 n(-std::sin(a), 0.0, std::cos(a));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (!cloud.anterior_mask[i]) continue;
    const Vec3 p = pose.rotation * cloud.points[i] + pose.translation;
    best = std::min(best, n.dot(p) - offset);
  }
  return best;
}

std::vector<MarkerFrame> shifted(std::vector<MarkerFrame> frames, const Vec3& d) {
  for (auto& f : frames) {
    for (auto& [label, p] : f.positions) {
      if (label.starts_with("R_")) p += d;
    }
  }
  return frames;
}

}  // namespace

TEST_CASE("fit_rigid_transform: identical sets give the identity") {
  const auto refs = make_default_sole_cloud().marker_refs;
  const auto reg = fit_rigid_transform(refs, refs);
  CHECK((reg.transform.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK(reg.transform.translation.norm() < 1e-9);
  CHECK(reg.rms_mm < 1e-9);
}

TEST_CASE("fit_rigid_transform: pure translation") {
  const auto refs = make_default_sole_cloud().marker_refs;
  const auto reg = fit_rigid_transform(refs, transformed(refs, Mat3::Identity(), Vec3(10, 0, 0)));
  CHECK((reg.transform.rotation - Mat3::Identity()).norm() < 1e-12);
  CHECK((reg.transform.translation - Vec3(10, 0, 0)).norm() < 1e-9);
  CHECK(reg.rms_mm < 1e-9);
}

TEST_CASE("fit_rigid_transform: random proper motions round-trip") {
  Rng rng(7);
  const auto refs = make_default_sole_cloud().marker_refs;
  for (int trial = 0; trial < 200; ++trial) {
    const Mat3 r = random_rotation(rng);
    const Vec3 t(500 * rng.normal(), 500 * rng.normal(), 500 * rng.normal());
    const auto observed = transformed(refs, r, t);
    const auto reg = fit_rigid_transform(refs, observed);
    REQUIRE_NOTHROW(reg.transform.validate());
    double worst = 0.0;
    for (const auto& [k, p] : refs) worst = std::max(worst, (reg.transform.apply(p) - observed.at(k)).norm());
    CHECK(worst < 1e-9);
    CHECK(reg.rms_mm < 1e-9);
  }
}

TEST_CASE("fit_rigid_transform: noisy markers stay within 3 sigma RMS") {
  Rng rng(11);
  const auto refs = make_default_sole_cloud().marker_refs;
  const double sigma = 0.8;
  for (int trial = 0; trial < 100; ++trial) {
    auto observed = transformed(refs, random_rotation(rng), Vec3(100, -50, 300));
    for (auto& [k, p] : observed) p += sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
    CHECK(fit_rigid_transform(refs, observed).rms_mm <= 3.0 * sigma);
  }
}

TEST_CASE("fit_rigid_transform: result does not depend on label names or order") {
  Rng rng(3);
  const auto refs = make_default_sole_cloud().marker_refs;
  const Mat3 r = random_rotation(rng);
  const auto observed = transformed(refs, r, Vec3(1, 2, 3));
  const auto base = fit_rigid_transform(refs, observed);

  // Relabel so the map iterates the markers in reverse order.
  LabeledPoints refs2, obs2;
  std::size_t i = refs.size();
  for (const auto& [k, p] : refs) {
    const std::string label = std::string(1, static_cast<char>('a' + --i)) + k;
    refs2.emplace(label, p);
    obs2.emplace(label, observed.at(k));
  }
  const auto relabeled = fit_rigid_transform(refs2, obs2);
  CHECK((relabeled.transform.rotation - base.transform.rotation).norm() < 1e-12);
  CHECK((relabeled.transform.translation - base.transform.translation).norm() < 1e-9);
}

TEST_CASE("fit_rigid_transform: error cases") {
  LabeledPoints two{{"a", Vec3(0, 0, 0)}, {"b", Vec3(1, 0, 0)}};
  CHECK_THROWS_AS(fit_rigid_transform(two, two), Error);
  try {
    fit_rigid_transform(two, two);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FewerThanThreeMarkers);
  }

  LabeledPoints line{{"a", Vec3(0, 0, 0)}, {"b", Vec3(10, 0, 0)}, {"c", Vec3(20, 0, 0)}};
  try {
    fit_rigid_transform(line, line);
    FAIL("expected CollinearMarkers");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CollinearMarkers);
  }

  const auto refs = make_default_sole_cloud().marker_refs;
  LabeledPoints unknown = refs;
  unknown.emplace("NOPE", Vec3(0, 0, 0));
  try {
    fit_rigid_transform(refs, unknown);
    FAIL("expected LabelMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LabelMismatch);
  }
}

TEST_CASE("default sole cloud") {
  const auto cloud = make_default_sole_cloud();
  CHECK(cloud.points.size() == 500);
  CHECK(cloud.anterior_count() >= 200);
  CHECK_NOTHROW(cloud.validate());
}

TEST_CASE("anterior mask splits at the bounding-box midpoint") {
  std::vector<Vec3> pts{Vec3(0, 0, 0), Vec3(100, 0, 0), Vec3(49, 0, 0), Vec3(51, 0, 0)};
  const auto mask = anterior_half_mask(pts);
  CHECK(mask == std::vector<bool>{false, true, false, true});
}

TEST_CASE("ground plane: flat static pose at 0 degrees calibrates to zero clearance") {
  const auto cloud = make_default_sole_cloud();
  const auto frames = plant::static_calibration_frames(cloud, 0.0);
  const auto plane = ground_plane_from_calibration(frames, cloud, 0.0, Leg::Right);
  const auto pose = fit_rigid_transform(cloud.marker_refs, frames.front().shoe_markers(Leg::Right)).transform;
  CHECK(std::abs(toe_clearance(cloud, pose, plane).value) < 1e-9);
  CHECK(std::abs(plane.height_offset) < 1e-9);

  // Lifting the shoe 5 mm along the normal moves the calibrated offset with it.
  const auto lifted = ground_plane_from_calibration(shifted(frames, Vec3(0, 0, 5)), cloud, 0.0, Leg::Right);
  CHECK(lifted.height_offset == doctest::Approx(plane.height_offset + 5.0).epsilon(1e-12));
}

TEST_CASE("ground plane: 10 degree calibration matches a brute-force scan") {
  const auto cloud = make_default_sole_cloud();
  const auto frames = plant::static_calibration_frames(cloud, 10.0);
  const auto plane = ground_plane_from_calibration(frames, cloud, 10.0, Leg::Right);
  const auto pose = fit_rigid_transform(cloud.marker_refs, frames.front().shoe_markers(Leg::Right)).transform;
  CHECK(std::abs(brute_force_clearance(cloud, pose, 10.0, plane.height_offset)) < 1e-6);
}

TEST_CASE("ground plane: error cases") {
  const auto cloud = make_default_sole_cloud();
  auto frames = plant::static_calibration_frames(cloud, 0.0, 0.3);
  try {
    ground_plane_from_calibration(frames, cloud, 0.0, Leg::Right);
    FAIL("expected a span error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientStaticSpan);
  }

  frames = plant::static_calibration_frames(cloud, 0.0);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i].positions.at("R_PP2") += Vec3(i % 2 ? 4.0 : -4.0, 0, 0);
  }
  try {
    ground_plane_from_calibration(frames, cloud, 0.0, Leg::Right);
    FAIL("expected MarkersNotStationary");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MarkersNotStationary);
  }
}

TEST_CASE("toe_clearance: normal translation is additive, parallel translation is invisible") {
  Rng rng(5);
  const auto cloud = make_default_sole_cloud();
  for (double incline : {-5.0, 0.0, 5.0, 10.0}) {
    const GroundPlane plane{incline, 3.0};
    RigidTransform pose;
    pose.rotation = Eigen::AngleAxisd(0.3 * rng.normal(), Vec3::UnitY()).toRotationMatrix();
    pose.translation = Vec3(100, 20, 40);
    const double base = toe_clearance(cloud, pose, plane).value;

    RigidTransform up = pose;
    up.translation += 12.5 * plane.normal();
    CHECK(std::abs(toe_clearance(cloud, up, plane).value - (base + 12.5)) < 1e-9);

    RigidTransform slid = pose;
    slid.translation += 250.0 * plane.along() + Vec3(0, -80, 0);
    CHECK(std::abs(toe_clearance(cloud, slid, plane).value - base) < 1e-9);
  }
}

TEST_CASE("toe_clearance: rotation about a heel pivot on the plane equals the exhaustive minimum") {
  const auto cloud = make_default_sole_cloud();
  const GroundPlane plane{0.0, 0.0};
  // Heel pivot: the most posterior sole point, placed on the plane.
  const auto heel = *std::min_element(cloud.points.begin(), cloud.points.end(),
                                      [](const Vec3& a, const Vec3& b) { return a.x() < b.x(); });
  RigidTransform pose;
  pose.rotation = Eigen::AngleAxisd(-10.0 * std::numbers::pi / 180.0, Vec3::UnitY()).toRotationMatrix();
  pose.translation = -pose.rotation * heel;
  const double value = toe_clearance(cloud, pose, plane).value;
  CHECK(std::abs(value - brute_force_clearance(cloud, pose, 0.0, 0.0)) < 1e-9);
  CHECK(value > 0.0);
}

TEST_CASE("toe_clearance: never exceeds the distance of any anterior point") {
  Rng rng(9);
  const auto cloud = make_default_sole_cloud();
  const GroundPlane plane{5.0, -2.0};
  for (int trial = 0; trial < 20; ++trial) {
    RigidTransform pose{random_rotation(rng), Vec3(rng.normal(), rng.normal(), rng.normal()) * 100};
    const double value = toe_clearance(cloud, pose, plane).value;
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      if (cloud.anterior_mask[i]) CHECK(value <= plane.signed_distance(pose.apply(cloud.points[i])) + 1e-12);
    }
  }
}

TEST_CASE("toe_clearance: negative values are kept") {
  const auto cloud = make_default_sole_cloud();
  RigidTransform pose;
  pose.translation = Vec3(0, 0, -4.0);
  CHECK(toe_clearance(cloud, pose, GroundPlane{}).value < -3.9);
}

TEST_CASE("toe_clearance: empty anterior set") {
  auto cloud = make_default_sole_cloud();
  std::fill(cloud.anterior_mask.begin(), cloud.anterior_mask.end(), false);
  try {
    toe_clearance(cloud, RigidTransform{}, GroundPlane{});
    FAIL("expected EmptyAnteriorSet");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyAnteriorSet);
  }
}

TEST_CASE("measure_clearance holds when markers are occluded") {
  const auto cloud = make_default_sole_cloud();
  LabeledPoints two{{"PP2", cloud.marker_refs.at("PP2")}, {"HEEL", cloud.marker_refs.at("HEEL")}};
  CHECK_FALSE(measure_clearance(cloud, two, GroundPlane{}).has_value());
  CHECK(measure_clearance(cloud, cloud.marker_refs, GroundPlane{}).has_value());
}

TEST_CASE("sole cloud and marker CSV round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "fesloop_geometry_test";
  std::filesystem::create_directories(dir);
  const auto cloud = make_default_sole_cloud();
  write_sole_cloud(cloud, dir / "sole.csv", dir / "refs.csv");
  const auto back = read_sole_cloud(dir / "sole.csv", dir / "refs.csv");
  REQUIRE(back.points.size() == cloud.points.size());
  CHECK(back.anterior_mask == cloud.anterior_mask);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) CHECK((back.points[i] - cloud.points[i]).norm() < 1e-9);

  auto frames = plant::static_calibration_frames(cloud, 5.0, 0.1);
  frames[1].positions.erase("L_PP2");
  write_marker_csv(dir / "frames.csv", frames);
  const auto frames_back = read_marker_csv(dir / "frames.csv");
  REQUIRE(frames_back.size() == frames.size());
  CHECK_FALSE(frames_back[1].valid("L_PP2"));
  CHECK((*frames_back[0].get("R_MTP1") - *frames[0].get("R_MTP1")).norm() < 1e-9);
  std::filesystem::remove_all(dir);
}
