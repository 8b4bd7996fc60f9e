#pragma once

// Numeric CSV ingest: a header row of column names followed by rows of finite
// numbers, comma separated.

#include "gmm_audit/errors.hpp"
#include "gmm_audit/moment_core.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gmm_audit::cli {

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  for (;;) {
    const auto pos = line.find(',');
    cells.push_back(trim(line.substr(0, pos)));
    if (pos == std::string_view::npos) return cells;
    line.remove_prefix(pos + 1);
  }
}

}  // namespace detail

/// Parses CSV text; `source` names the input in error messages.
inline Dataset parse_csv(std::string_view text, const std::string& source = "input") {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw FormatError(source + ": empty file (expected a header row)");

  std::vector<std::string> names;
  for (auto cell : detail::split(lines.front())) {
    if (cell.empty()) throw ParseError(source + ": empty column name", 1, names.size() + 1);
    names.emplace_back(cell);
  }
  if (lines.size() == 1) throw FormatError(source + ": header row but no data rows");

  const auto cols = static_cast<Index>(names.size());
  RowMatrix values(static_cast<Index>(lines.size() - 1), cols);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto cells = detail::split(lines[li]);
    const auto row = static_cast<Index>(li - 1);
    for (Index j = 0; j < cols; ++j) {
      const auto column = static_cast<std::size_t>(j) + 1;
      if (static_cast<std::size_t>(j) >= cells.size() || cells[static_cast<std::size_t>(j)].empty())
        throw ParseError(source + ": missing value for column '" + names[static_cast<std::size_t>(j)] + "'",
                         li + 1, column);
      const auto cell = cells[static_cast<std::size_t>(j)];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw ParseError(source + ": non-numeric value '" + std::string(cell) + "'", li + 1, column);
      values(row, j) = v;
    }
    if (cells.size() > names.size())
      throw ParseError(source + ": more cells than header columns", li + 1, names.size() + 1);
  }
  return Dataset(std::move(values), std::move(names));
}

inline Dataset ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open data file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path.string());
}

}  // namespace gmm_audit::cli
