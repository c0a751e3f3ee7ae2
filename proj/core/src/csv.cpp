#include "fesloop/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fesloop/errors.hpp"

namespace fesloop::csv {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(ErrorCode::IoError, "missing CSV column '" + std::string(name) + "'");
}

Table parse(std::istream& in) {
  Table table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      table.header = split(line);
      first = false;
      continue;
    }
    auto fields = split(line);
    if (fields.size() != table.header.size()) {
      throw Error(ErrorCode::IoError, "CSV row has " + std::to_string(fields.size()) +
                                          " fields, header has " +
                                          std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (first) throw Error(ErrorCode::IoError, "empty CSV");
  return table;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return parse(in);
}

std::string format(double value) {
  if (std::isnan(value)) return {};
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc{}) throw Error(ErrorCode::IoError, "cannot format double");
  return std::string(buf, end);
}

double parse_double(std::string_view field) {
  if (field.empty()) return std::numeric_limits<double>::quiet_NaN();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc{} || ptr != field.data() + field.size()) {
    throw Error(ErrorCode::IoError, "not a number: '" + std::string(field) + "'");
  }
  return value;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << fields[i];
  }
  out << '\n';
}

}  // namespace fesloop::csv
