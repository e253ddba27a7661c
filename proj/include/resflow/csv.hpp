#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace resflow::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index of `name`; DataError when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a comma-delimited file with a header line. Blank lines are skipped;
/// fields are trimmed. Rows with a field count different from the header are
/// a DataError naming the file and line.
Table read(const std::filesystem::path& path);

std::vector<std::string> split(const std::string& line, char sep = ',');
double to_double(const std::string& field, const std::string& context);

/// Shortest round-trippable decimal rendering of a double.
std::string format_double(double v);

}  // namespace resflow::csv
