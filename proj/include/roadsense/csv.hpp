#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace roadsense {

/// Rectangular table; every column header is written as "name [unit]".
struct CsvTable {
  std::vector<std::string> names;
  std::vector<std::string> units;
  std::vector<std::vector<std::string>> rows;

  void add_column(std::string name, std::string unit);
  std::size_t column(const std::string& name) const;  // throws MalformedSpec
};

/// Shortest representation that parses back to the same double.
std::string format_number(double value);
double parse_number(const std::string& text);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// Time-indexed matrix: first column "t [step]", then one column per cell
/// labelled "cell_<id>".
CsvTable matrix_table(const Eigen::MatrixXd& values, const std::vector<int>& cell_ids,
                      const std::string& unit, int first_step = 0);
Eigen::MatrixXd table_matrix(const CsvTable& table, std::vector<int>* cell_ids = nullptr);

}  // namespace roadsense
