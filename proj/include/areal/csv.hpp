#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace areal {

// A fully loaded CSV file with a mandatory header row. Cells are kept as
// strings; typed accessors report failures with file, line and column.
// Quoted fields are not supported (none of the formats need them).
struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  std::size_t n_rows() const noexcept { return rows.size(); }
  std::optional<std::size_t> find_column(std::string_view name) const;
  std::size_t column(std::string_view name) const;  // throws SchemaError

  const std::string& cell(std::size_t row, std::size_t col) const { return rows[row][col]; }
  bool is_empty(std::size_t row, std::size_t col) const;
  double number(std::size_t row, std::size_t col) const;
  std::optional<double> optional_number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

  [[noreturn]] void fail(std::size_t row, std::size_t col, const std::string& what) const;
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(std::string_view text, std::string path_label = "<memory>");

// Shortest text that round-trips the double exactly; "nan" for NaN.
std::string format_double(double x);

// Writes through a sibling temp file and renames into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Plain-text "key = value" files (config and archive metadata). Lines starting
// with '#' and blank lines are ignored.
std::map<std::string, std::string> read_key_value(const std::filesystem::path& path);
std::string format_key_value(const std::map<std::string, std::string>& entries);

}  // namespace areal
