#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fesloop {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Label -> position. Ordered so that every traversal is deterministic.
using LabeledPoints = std::map<std::string, Vec3>;

// Lab frame: x anterior (walking direction), y left, z up. Millimetres.
namespace marker_label {
inline constexpr std::string_view kPP2 = "PP2";
inline constexpr std::string_view kMTP1 = "MTP1";
inline constexpr std::string_view kMTP5 = "MTP5";
inline constexpr std::string_view kHeel = "HEEL";
inline constexpr std::string_view kLeftAsis = "LASI";
inline constexpr std::string_view kRightAsis = "RASI";
}  // namespace marker_label

enum class Leg { Right, Left };

std::string_view to_string(Leg leg);
/// "R_" or "L_"; shoe markers in a lab frame carry this prefix.
std::string leg_prefix(Leg leg);

/// One motion-capture sample. Occluded markers are simply absent from `positions`.
struct MarkerFrame {
  double t = 0.0;
  LabeledPoints positions;

  bool valid(std::string_view label) const;
  std::optional<Vec3> get(std::string_view label) const;

  /// Shoe markers of one leg with the leg prefix stripped ("R_PP2" -> "PP2").
  LabeledPoints shoe_markers(Leg leg) const;
};

/// Writes `t_s,<label>_x_mm,<label>_y_mm,<label>_z_mm,...`; the label set is
/// the union over all frames, and missing markers are written as empty fields.
void write_marker_csv(const std::filesystem::path& path, const std::vector<MarkerFrame>& frames);
std::vector<MarkerFrame> read_marker_csv(const std::filesystem::path& path);

}  // namespace fesloop
