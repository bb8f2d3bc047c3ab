#include "narxsel/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "narxsel/error.hpp"

namespace narxsel {

namespace {

std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    auto cell = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
      cell.remove_suffix(1);
    }
    cells.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) throw Error(ErrorCode::numerical, "cannot format double");
  return std::string(buf.data(), ptr);
}

double parse_double(std::string_view text) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) {
    throw Error(ErrorCode::parse, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(ErrorCode::parse, "missing column '" + std::string(name) + "'");
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const auto& cells = rows.at(row);
  const std::string where = "row " + std::to_string(row + 2) + ", column '" +
                            (col < header.size() ? header[col] : std::to_string(col)) + "'";
  if (col >= cells.size()) throw Error(ErrorCode::parse, "missing cell at " + where);
  try {
    return parse_double(cells[col]);
  } catch (const Error&) {
    throw Error(ErrorCode::parse, "non-numeric cell '" + cells[col] + "' at " + where);
  }
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (!have_header) {
      table.header = split_line(line);
      have_header = true;
    } else {
      table.rows.push_back(split_line(line));
    }
  }
  if (!have_header) throw Error(ErrorCode::parse, "CSV input has no header");
  return table;
}

CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return read_csv(in);
}

void write_csv_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

void write_series_csv(std::ostream& out, const TimeSeriesPair& pair) {
  out << "t,u,y\n";
  for (std::size_t t = 0; t < pair.size(); ++t) {
    out << t << ',' << format_double(pair.u[t]) << ',' << format_double(pair.y[t]) << '\n';
  }
}

TimeSeriesPair read_series_csv(std::istream& in) {
  const auto table = read_csv(in);
  const auto cu = table.column("u");
  const auto cy = table.column("y");
  TimeSeriesPair pair;
  pair.u.reserve(table.rows.size());
  pair.y.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    pair.u.push_back(table.number(r, cu));
    pair.y.push_back(table.number(r, cy));
  }
  return pair;
}

void write_lagged_csv(std::ostream& out, const LaggedDataset& dataset) {
  std::vector<std::string> cells;
  for (const auto& label : dataset.labels) cells.push_back(label.name());
  cells.emplace_back("target");
  write_csv_row(out, cells);
  for (Eigen::Index i = 0; i < dataset.rows(); ++i) {
    cells.clear();
    for (Eigen::Index j = 0; j < dataset.cols(); ++j) cells.push_back(format_double(dataset.X(i, j)));
    cells.push_back(format_double(dataset.targets(i)));
    write_csv_row(out, cells);
  }
}

LaggedDataset read_lagged_csv(std::istream& in) {
  const auto table = read_csv(in);
  if (table.header.size() < 2 || table.header.back() != "target") {
    throw Error(ErrorCode::parse, "lagged CSV must end with a 'target' column");
  }
  LaggedDataset ds;
  const auto width = table.header.size() - 1;
  for (std::size_t j = 0; j < width; ++j) {
    ds.labels.push_back(ColumnLabel::parse(table.header[j]));
    ds.lag = std::max(ds.lag, ds.labels.back().lag);
  }
  const auto rows = static_cast<Eigen::Index>(table.rows.size());
  ds.X.resize(rows, static_cast<Eigen::Index>(width));
  ds.targets.resize(rows);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (std::size_t j = 0; j < width; ++j) {
      ds.X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = table.number(r, j);
    }
    ds.targets(static_cast<Eigen::Index>(r)) = table.number(r, width);
  }
  return ds;
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << contents;
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

}  // namespace narxsel
