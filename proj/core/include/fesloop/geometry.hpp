#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fesloop/markers.hpp"

namespace fesloop::geometry {

/// Scanned sole of one shoe, expressed in the shoe frame (x toward the toes,
/// y left, z up; millimetres). `marker_refs` are the reflective-marker centres
/// from the same scan and anchor the registration to lab-frame observations.
struct SoleCloud {
  std::vector<Vec3> points;
  std::vector<bool> anterior_mask;
  LabeledPoints marker_refs;

  std::size_t anterior_count() const;

  /// Throws InvalidCloud, EmptyAnteriorSet, FewerThanThreeMarkers or CollinearMarkers.
  void validate() const;
};

/// Marks points anterior of the bounding-box midpoint along the shoe x axis.
std::vector<bool> anterior_half_mask(std::span<const Vec3> points);

/// Synthetic sole: 25 x 20 grid over a 280 mm last with a curved toe spring,
/// PP2/MTP1/MTP5/HEEL markers on the upper.
SoleCloud make_default_sole_cloud();

SoleCloud read_sole_cloud(const std::filesystem::path& points_csv,
                          const std::filesystem::path& markers_csv);
void write_sole_cloud(const SoleCloud& cloud, const std::filesystem::path& points_csv,
                      const std::filesystem::path& markers_csv);

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// Throws InvalidTransform unless rotation is proper and orthonormal within 1e-9.
  void validate() const;
};

struct Registration {
  RigidTransform transform;
  double rms_mm = 0.0;
};

/// Least-squares rigid fit (Kabsch) mapping scan-frame markers onto observed
/// lab-frame markers, matched by label. Observed labels must all exist in the scan.
Registration fit_rigid_transform(const LabeledPoints& scan_markers,
                                 const LabeledPoints& observed_markers);

/// Treadmill surface tilted about the lateral (y) axis. Positive incline
/// rises in the walking direction. The plane is { p : normal . p = height_offset }.
struct GroundPlane {
  double incline_deg = 0.0;
  double height_offset = 0.0;

  Vec3 normal() const;
  /// Unit vector in the plane pointing in the walking direction.
  Vec3 along() const;
  double signed_distance(const Vec3& p) const { return normal().dot(p) - height_offset; }

  void validate() const;
};

struct ToeClearance {
  double value = 0.0;  // mm; negative below the plane
};

/// Minimum signed distance between the posed anterior sole and the plane.
ToeClearance toe_clearance(const SoleCloud& cloud, const RigidTransform& pose,
                           const GroundPlane& plane);

/// Calibrates the plane offset from a static recording of the unloaded shoe
/// so that the posed anterior sole touches the plane (zero clearance).
GroundPlane ground_plane_from_calibration(std::span<const MarkerFrame> static_frames,
                                          const SoleCloud& cloud, double incline_deg, Leg leg);

/// Registration + clearance for one frame. Returns nullopt when fewer than
/// three shoe markers are visible or the fit is degenerate, so the caller can
/// hold the previous value.
std::optional<ToeClearance> measure_clearance(const SoleCloud& cloud, const LabeledPoints& observed,
                                              const GroundPlane& plane);

}  // namespace fesloop::geometry
