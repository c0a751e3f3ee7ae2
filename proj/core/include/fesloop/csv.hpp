#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace fesloop::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a named column; throws IoError when absent.
  std::size_t column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::istream& in);

/// Shortest text that round-trips the double exactly; NaN is written as an empty field.
std::string format(double value);

double parse_double(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace fesloop::csv
