#include "fesloop/markers.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "fesloop/csv.hpp"
#include "fesloop/errors.hpp"

namespace fesloop {

std::string_view to_string(Leg leg) { return leg == Leg::Right ? "right" : "left"; }

std::string leg_prefix(Leg leg) { return leg == Leg::Right ? "R_" : "L_"; }

bool MarkerFrame::valid(std::string_view label) const {
  auto it = positions.find(std::string(label));
  return it != positions.end() && it->second.allFinite();
}

std::optional<Vec3> MarkerFrame::get(std::string_view label) const {
  if (!valid(label)) return std::nullopt;
  return positions.find(std::string(label))->second;
}

LabeledPoints MarkerFrame::shoe_markers(Leg leg) const {
  const std::string prefix = leg_prefix(leg);
  LabeledPoints out;
  for (const auto& [label, p] : positions) {
    if (label.rfind(prefix, 0) == 0 && p.allFinite()) out.emplace(label.substr(prefix.size()), p);
  }
  return out;
}

void write_marker_csv(const std::filesystem::path& path, const std::vector<MarkerFrame>& frames) {
  std::set<std::string> labels;
  for (const auto& f : frames) {
    for (const auto& [label, p] : f.positions) labels.insert(label);
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  std::vector<std::string> header{"t_s"};
  for (const auto& label : labels) {
    header.push_back(label + "_x_mm");
    header.push_back(label + "_y_mm");
    header.push_back(label + "_z_mm");
  }
  csv::write_row(out, header);
  for (const auto& f : frames) {
    std::vector<std::string> row{csv::format(f.t)};
    for (const auto& label : labels) {
      auto p = f.get(label);
      for (int k = 0; k < 3; ++k) row.push_back(p ? csv::format((*p)[k]) : std::string{});
    }
    csv::write_row(out, row);
  }
}

std::vector<MarkerFrame> read_marker_csv(const std::filesystem::path& path) {
  const csv::Table table = csv::read(path);
  const std::size_t t_col = table.column("t_s");

  struct Columns {
    std::string label;
    std::size_t x, y, z;
  };
  std::vector<Columns> columns;
  for (const auto& name : table.header) {
    const std::string suffix = "_x_mm";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      const std::string label = name.substr(0, name.size() - suffix.size());
      columns.push_back({label, table.column(label + "_x_mm"), table.column(label + "_y_mm"),
                         table.column(label + "_z_mm")});
    }
  }

  std::vector<MarkerFrame> frames;
  frames.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    MarkerFrame f;
    f.t = csv::parse_double(row[t_col]);
    if (!std::isfinite(f.t)) throw Error(ErrorCode::IoError, "marker frame without time stamp");
    if (!frames.empty() && f.t <= frames.back().t) {
      throw Error(ErrorCode::IoError, "marker frame times must be strictly increasing");
    }
    for (const auto& c : columns) {
      Vec3 p(csv::parse_double(row[c.x]), csv::parse_double(row[c.y]), csv::parse_double(row[c.z]));
      if (p.allFinite()) f.positions.emplace(c.label, p);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

}  // namespace fesloop
