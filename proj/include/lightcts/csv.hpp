#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lightcts {

// Plain comma-separated table; fields never contain commas or quotes.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column; throws FormatError when absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path, bool has_header = true);
CsvTable parse_csv(std::string_view text, bool has_header = true);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
std::string format_csv(const CsvTable& table);

// Shortest decimal text that parses back to the identical double.
std::string format_double(double v);
// Strict parse of a whole field; throws FormatError on junk.
double parse_double(std::string_view text);
unsigned long long parse_unsigned(std::string_view text);

}  // namespace lightcts
