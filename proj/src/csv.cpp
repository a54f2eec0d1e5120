#include "qkdsim/csv.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <limits>
#include <sstream>

#include "qkdsim/errors.hpp"

namespace qkdsim {

namespace {

std::string trim(const std::string& s) {
  auto b = s.begin();
  auto e = s.end();
  while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
  while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
  return std::string(b, e);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) {
    throw ConfigError("missing required column '" + name + "'");
  }
  return static_cast<std::size_t>(it - columns.begin());
}

bool CsvTable::has_column(const std::string& name) const {
  return std::find(columns.begin(), columns.end(), name) != columns.end();
}

CsvTable parse_csv(std::istream& in, const std::string& origin,
                   bool lenient) {
  CsvTable table;
  std::string line;
  std::size_t lineno = 0;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;

    if (table.columns.empty()) {
      table.columns = split_fields(line);
      continue;
    }

    const auto fields = split_fields(line);
    if (fields.size() != table.columns.size()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(table.columns.size()) +
                        " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      try {
        std::size_t consumed = 0;
        const double v = std::stod(fields[i], &consumed);
        if (consumed != fields[i].size()) throw std::invalid_argument("trail");
        row.push_back(v);
      } catch (const std::exception&) {
        if (lenient) {
          row.push_back(std::numeric_limits<double>::quiet_NaN());
          continue;
        }
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": field '" + table.columns[i] +
                          "' is not a number: '" + fields[i] + "'");
      }
    }
    table.rows.push_back(std::move(row));
  }

  if (table.columns.empty()) {
    throw ConfigError(origin + ": missing header row");
  }
  return table;
}

CsvTable read_csv(const std::string& path, bool lenient) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  return parse_csv(in, path, lenient);
}

}  // namespace qkdsim
