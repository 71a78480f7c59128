#include "roadsense/csv.hpp"

#include "roadsense/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace roadsense {

void CsvTable::add_column(std::string name, std::string unit) {
  names.push_back(std::move(name));
  units.push_back(std::move(unit));
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw MalformedSpec("missing CSV column '" + name + "'");
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";  // folds -0
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) throw std::runtime_error("number formatting failed");
  return std::string(buf, ptr);
}

double parse_number(const std::string& text) {
  if (text == "nan") return std::nan("");
  if (text == "inf") return HUGE_VAL;
  if (text == "-inf") return -HUGE_VAL;
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw MalformedSpec("not a number: '" + text + "'");
  return v;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MalformedSpec("cannot write " + path.string());
  for (std::size_t i = 0; i < table.names.size(); ++i) {
    if (i) out << ',';
    out << table.names[i] << " [" << table.units[i] << ']';
  }
  out << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  }
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) cells.push_back(cur);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MalformedSpec("cannot read " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw MalformedSpec(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  for (const auto& head : split_line(line)) {
    const auto open = head.rfind(" [");
    if (open == std::string::npos || head.back() != ']') {
      throw MalformedSpec(path.string() + ":1: header '" + head + "' lacks a [unit]");
    }
    table.add_column(head.substr(0, open), head.substr(open + 2, head.size() - open - 3));
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto row = split_line(line);
    if (row.size() != table.names.size()) {
      throw MalformedSpec(path.string() + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(table.names.size()) + " fields, got " +
                          std::to_string(row.size()));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

CsvTable matrix_table(const Eigen::MatrixXd& values, const std::vector<int>& cell_ids,
                      const std::string& unit, int first_step) {
  CsvTable t;
  t.add_column("t", "step");
  for (int id : cell_ids) t.add_column("cell_" + std::to_string(id), unit);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(cell_ids.size() + 1);
    row.push_back(std::to_string(first_step + r));
    for (Eigen::Index c = 0; c < values.cols(); ++c) row.push_back(format_number(values(r, c)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

Eigen::MatrixXd table_matrix(const CsvTable& table, std::vector<int>* cell_ids) {
  if (table.names.empty() || table.names[0] != "t") throw MalformedSpec("trace table needs a 't' column");
  const auto cols = static_cast<Eigen::Index>(table.names.size() - 1);
  if (cell_ids) {
    cell_ids->clear();
    for (std::size_t i = 1; i < table.names.size(); ++i) {
      const auto& name = table.names[i];
      if (name.rfind("cell_", 0) != 0) throw MalformedSpec("unexpected trace column '" + name + "'");
      cell_ids->push_back(static_cast<int>(parse_number(name.substr(5))));
    }
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(table.rows.size()), cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), c) = parse_number(table.rows[r][static_cast<std::size_t>(c + 1)]);
    }
  }
  return m;
}

}  // namespace roadsense
