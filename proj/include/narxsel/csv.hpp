#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "narxsel/datagen.hpp"

namespace narxsel {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);

/// A header plus rows of raw cells; rows are 1-based in error messages with
/// the header as row 1.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header, or a parse error naming the column.
  std::size_t column(std::string_view name) const;
  /// Parses cell (row, col) as a double, or a parse error naming row/column.
  double number(std::size_t row, std::size_t col) const;
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::filesystem::path& path);

void write_csv_row(std::ostream& out, const std::vector<std::string>& cells);

/// Header `t,u,y`.
void write_series_csv(std::ostream& out, const TimeSeriesPair& pair);
TimeSeriesPair read_series_csv(std::istream& in);

/// Header `<column labels>,target`.
void write_lagged_csv(std::ostream& out, const LaggedDataset& dataset);
LaggedDataset read_lagged_csv(std::istream& in);

void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace narxsel
