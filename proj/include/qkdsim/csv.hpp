#pragma once

// Minimal CSV support for calibration tables and traces: mandatory header
// row, numeric fields, '.' decimal separator, no thousands separators.

#include <iosfwd>
#include <string>
#include <vector>

namespace qkdsim {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  /// Index of a named column; throws ConfigError if absent.
  std::size_t column(const std::string& name) const;
  bool has_column(const std::string& name) const;
  bool empty() const { return rows.empty(); }
};

/// Parses CSV from a stream. `origin` names the source in error messages;
/// malformed rows are reported with their 1-based line number. In lenient
/// mode non-numeric fields parse as NaN instead of failing (for mixed
/// trace files whose text columns are not consumed numerically).
CsvTable parse_csv(std::istream& in, const std::string& origin,
                   bool lenient = false);

/// Reads a CSV file; throws ConfigError if the file cannot be opened.
CsvTable read_csv(const std::string& path, bool lenient = false);

}  // namespace qkdsim
