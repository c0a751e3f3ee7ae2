#include "fesloop/geometry.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "fesloop/csv.hpp"
#include "fesloop/errors.hpp"

namespace fesloop::geometry {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kMinTriangleArea = 1.0;       // mm^2
constexpr double kMaxStationarySd = 1.0;       // mm
constexpr double kMinStaticSpan = 0.5;         // s
constexpr double kMaxCalibrationRms = 2.0;     // mm

double max_triangle_area(const std::vector<Vec3>& pts) {
  double best = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j)
      for (std::size_t k = j + 1; k < pts.size(); ++k)
        best = std::max(best, 0.5 * (pts[j] - pts[i]).cross(pts[k] - pts[i]).norm());
  return best;
}

}  // namespace

std::size_t SoleCloud::anterior_count() const {
  return static_cast<std::size_t>(std::count(anterior_mask.begin(), anterior_mask.end(), true));
}

void SoleCloud::validate() const {
  if (points.empty()) throw Error(ErrorCode::InvalidCloud, "sole cloud has no points");
  if (anterior_mask.size() != points.size()) {
    throw Error(ErrorCode::InvalidCloud, "anterior mask size does not match point count");
  }
  for (const auto& p : points) {
    if (!p.allFinite()) throw Error(ErrorCode::InvalidCloud, "non-finite sole point");
  }
  if (anterior_count() == 0) throw Error(ErrorCode::EmptyAnteriorSet, "anterior mask selects no points");
  if (marker_refs.size() < 3) {
    throw Error(ErrorCode::FewerThanThreeMarkers, "sole cloud needs at least 3 marker references");
  }
  std::vector<Vec3> refs;
  for (const auto& [label, p] : marker_refs) {
    if (!p.allFinite()) throw Error(ErrorCode::InvalidCloud, "non-finite marker reference " + label);
    refs.push_back(p);
  }
  if (max_triangle_area(refs) <= kMinTriangleArea) {
    throw Error(ErrorCode::CollinearMarkers, "marker references are collinear");
  }
}

std::vector<bool> anterior_half_mask(std::span<const Vec3> points) {
  if (points.empty()) return {};
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : points) {
    lo = std::min(lo, p.x());
    hi = std::max(hi, p.x());
  }
  const double mid = 0.5 * (lo + hi);
  std::vector<bool> mask(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) mask[i] = points[i].x() > mid;
  return mask;
}

SoleCloud make_default_sole_cloud() {
  constexpr int kAlong = 25;
  constexpr int kAcross = 20;
  constexpr double kLength = 280.0;
  SoleCloud cloud;
  cloud.points.reserve(kAlong * kAcross);
  for (int i = 0; i < kAlong; ++i) {
    const double x = kLength * i / (kAlong - 1);
    // Outline: narrow heel, wide forefoot, rounded toe.
    const double u = x / kLength;
    const double half_width = 32.0 + 18.0 * std::sin(std::numbers::pi * std::min(u / 0.75, 1.0) * 0.5) -
                              (u > 0.85 ? 30.0 * (u - 0.85) / 0.15 : 0.0);
    // Toe spring lifts the front of the sole; a slight heel bevel at the back.
    const double z_base = (x > 190.0 ? 14.0 * std::pow((x - 190.0) / 90.0, 2.0) : 0.0) +
                          (x < 30.0 ? 4.0 * std::pow((30.0 - x) / 30.0, 2.0) : 0.0);
    for (int j = 0; j < kAcross; ++j) {
      const double v = -1.0 + 2.0 * j / (kAcross - 1);
      const double y = half_width * v;
      // Sole edges roll up slightly.
      const double z = z_base + 3.0 * v * v;
      cloud.points.emplace_back(x, y, z);
    }
  }
  cloud.anterior_mask = anterior_half_mask(cloud.points);
  cloud.marker_refs = {
      {std::string(marker_label::kPP2), Vec3(235.0, 12.0, 48.0)},
      {std::string(marker_label::kMTP1), Vec3(190.0, 42.0, 40.0)},
      {std::string(marker_label::kMTP5), Vec3(168.0, -44.0, 34.0)},
      {std::string(marker_label::kHeel), Vec3(-12.0, 0.0, 58.0)},
  };
  return cloud;
}

SoleCloud read_sole_cloud(const std::filesystem::path& points_csv,
                          const std::filesystem::path& markers_csv) {
  SoleCloud cloud;
  const csv::Table pts = csv::read(points_csv);
  const auto cx = pts.column("x_mm"), cy = pts.column("y_mm"), cz = pts.column("z_mm");
  const auto ca = pts.column("anterior");
  for (const auto& row : pts.rows) {
    cloud.points.emplace_back(csv::parse_double(row[cx]), csv::parse_double(row[cy]),
                              csv::parse_double(row[cz]));
    const std::string& a = row[ca];
    if (a != "0" && a != "1" && a != "true" && a != "false") {
      throw Error(ErrorCode::IoError, "anterior column must be 0/1, got '" + a + "'");
    }
    cloud.anterior_mask.push_back(a == "1" || a == "true");
  }
  const csv::Table markers = csv::read(markers_csv);
  const auto ml = markers.column("label"), mx = markers.column("x_mm"), my = markers.column("y_mm"),
             mz = markers.column("z_mm");
  for (const auto& row : markers.rows) {
    cloud.marker_refs[row[ml]] =
        Vec3(csv::parse_double(row[mx]), csv::parse_double(row[my]), csv::parse_double(row[mz]));
  }
  cloud.validate();
  return cloud;
}

void write_sole_cloud(const SoleCloud& cloud, const std::filesystem::path& points_csv,
                      const std::filesystem::path& markers_csv) {
  std::ofstream pts(points_csv);
  std::ofstream mk(markers_csv);
  if (!pts || !mk) throw Error(ErrorCode::IoError, "cannot write sole cloud files");
  csv::write_row(pts, {"x_mm", "y_mm", "z_mm", "anterior"});
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& p = cloud.points[i];
    csv::write_row(pts, {csv::format(p.x()), csv::format(p.y()), csv::format(p.z()),
                         cloud.anterior_mask[i] ? "1" : "0"});
  }
  csv::write_row(mk, {"label", "x_mm", "y_mm", "z_mm"});
  for (const auto& [label, p] : cloud.marker_refs) {
    csv::write_row(mk, {label, csv::format(p.x()), csv::format(p.y()), csv::format(p.z())});
  }
}

void RigidTransform::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorCode::InvalidTransform, "non-finite transform");
  }
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw Error(ErrorCode::InvalidTransform, "rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidTransform, "rotation is not proper");
  }
}

Registration fit_rigid_transform(const LabeledPoints& scan_markers,
                                 const LabeledPoints& observed_markers) {
  std::vector<Vec3> src;
  std::vector<Vec3> dst;
  for (const auto& [label, q] : observed_markers) {
    auto it = scan_markers.find(label);
    if (it == scan_markers.end()) {
      throw Error(ErrorCode::LabelMismatch, "observed marker '" + label + "' is not in the scan");
    }
    src.push_back(it->second);
    dst.push_back(q);
  }
  if (src.size() < 3) {
    throw Error(ErrorCode::FewerThanThreeMarkers,
                std::to_string(src.size()) + " matched markers, need 3");
  }
  if (max_triangle_area(src) <= kMinTriangleArea) {
    throw Error(ErrorCode::CollinearMarkers, "matched scan markers are collinear");
  }

  const double n = static_cast<double>(src.size());
  Vec3 c_src = Vec3::Zero();
  Vec3 c_dst = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    c_src += src[i];
    c_dst += dst[i];
  }
  c_src /= n;
  c_dst /= n;

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) cov += (src[i] - c_src) * (dst[i] - c_dst).transpose();

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 fix = Mat3::Identity();
  fix(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  Registration reg;
  reg.transform.rotation = v * fix * u.transpose();
  reg.transform.translation = c_dst - reg.transform.rotation * c_src;

  double sq = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sq += (reg.transform.apply(src[i]) - dst[i]).squaredNorm();
  reg.rms_mm = std::sqrt(sq / n);
  return reg;
}

Vec3 GroundPlane::normal() const {
  const double a = incline_deg * kDegToRad;
  return Vec3(-std::sin(a), 0.0, std::cos(a));
}

Vec3 GroundPlane::along() const {
  const double a = incline_deg * kDegToRad;
  return Vec3(std::cos(a), 0.0, std::sin(a));
}

void GroundPlane::validate() const {
  if (!std::isfinite(incline_deg) || !std::isfinite(height_offset)) {
    throw Error(ErrorCode::InvalidPlane, "non-finite ground plane");
  }
  if (std::abs(incline_deg) > 30.0) throw Error(ErrorCode::InvalidPlane, "|incline| exceeds 30 deg");
}

ToeClearance toe_clearance(const SoleCloud& cloud, const RigidTransform& pose,
                           const GroundPlane& plane) {
  pose.validate();
  plane.validate();
  // n . (R p + t) - d  ==  (R^T n) . p + (n . t - d)
  const Vec3 n = plane.normal();
  const Vec3 n_shoe = pose.rotation.transpose() * n;
  const double bias = n.dot(pose.translation) - plane.height_offset;
  double best = std::numeric_limits<double>::infinity();
  const std::size_t count = std::min(cloud.points.size(), cloud.anterior_mask.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (cloud.anterior_mask[i]) best = std::min(best, n_shoe.dot(cloud.points[i]));
  }
  if (!std::isfinite(best)) throw Error(ErrorCode::EmptyAnteriorSet, "no anterior sole points");
  return {best + bias};
}

GroundPlane ground_plane_from_calibration(std::span<const MarkerFrame> static_frames,
                                          const SoleCloud& cloud, double incline_deg, Leg leg) {
  cloud.validate();
  GroundPlane plane{incline_deg, 0.0};
  plane.validate();
  if (static_frames.size() < 2 ||
      static_frames.back().t - static_frames.front().t < kMinStaticSpan - 1e-9) {
    throw Error(ErrorCode::InsufficientStaticSpan, "static recording must span at least 0.5 s");
  }

  // Average each marker that is visible in every frame.
  LabeledPoints mean;
  for (const auto& [label, ref] : cloud.marker_refs) {
    Vec3 sum = Vec3::Zero();
    bool always = true;
    for (const auto& f : static_frames) {
      auto p = f.get(leg_prefix(leg) + label);
      if (!p) {
        always = false;
        break;
      }
      sum += *p;
    }
    if (!always) continue;
    const Vec3 m = sum / static_cast<double>(static_frames.size());
    double sq = 0.0;
    for (const auto& f : static_frames) sq += (*f.get(leg_prefix(leg) + label) - m).squaredNorm();
    const double sd = std::sqrt(sq / static_cast<double>(static_frames.size() - 1));
    if (sd >= kMaxStationarySd) {
      throw Error(ErrorCode::MarkersNotStationary,
                  "marker " + label + " moves (SD " + std::to_string(sd) + " mm)");
    }
    mean.emplace(label, m);
  }

  Registration reg;
  try {
    reg = fit_rigid_transform(cloud.marker_refs, mean);
  } catch (const Error& e) {
    throw Error(ErrorCode::RegistrationFailed, e.what());
  }
  if (reg.rms_mm > kMaxCalibrationRms) {
    throw Error(ErrorCode::RegistrationFailed,
                "static registration residual " + std::to_string(reg.rms_mm) + " mm");
  }
  // Offset that puts the lowest anterior point exactly on the plane.
  plane.height_offset = toe_clearance(cloud, reg.transform, plane).value;
  return plane;
}

std::optional<ToeClearance> measure_clearance(const SoleCloud& cloud, const LabeledPoints& observed,
                                              const GroundPlane& plane) {
  if (observed.size() < 3) return std::nullopt;
  try {
    const Registration reg = fit_rigid_transform(cloud.marker_refs, observed);
    return toe_clearance(cloud, reg.transform, plane);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::FewerThanThreeMarkers || e.code() == ErrorCode::CollinearMarkers) {
      return std::nullopt;
    }
    throw;
  }
}

}  // namespace fesloop::geometry
