#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace mixflow {

/// Shortest decimal text that parses back to exactly `x`. Negative zero is
/// printed as 0.
std::string format_number(double x);

/// Parses a full decimal number. Throws ValidationError on trailing junk.
double parse_number(std::string_view text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name. Throws ValidationError if absent.
  std::size_t column(std::string_view name) const;
};

/// Reads simple comma-separated text (no quoting). Every row must have the
/// header's width. Throws ValidationError otherwise.
CsvTable parse_csv(std::string_view text);

std::string join_row(const std::vector<std::string>& cells);

}  // namespace mixflow
