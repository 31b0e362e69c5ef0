#pragma once

// Minimal CSV with a metadata preamble.
//
//   # facial-basis/<kind>/<version> key=value key=value
//   col_a,col_b,...
//   1.5,2,...
//
// Lines starting with '#' may only appear before the header. The first token
// of a comment that contains '/' is the format version; key=value tokens are
// metadata. Numbers are written in the shortest form that parses back to the
// identical double.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "facial_basis/errors.hpp"
#include "facial_basis/model_core.hpp"

namespace facial_basis {

inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc{}) throw InputError("format_double: conversion failed");
  return std::string(buf, end);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& cell : out) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
  }
  return out;
}

struct CsvTable {
  std::string source;
  std::string format_version;  // empty when the file carries none
  std::map<std::string, std::string> meta;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;  // 1-based source line of each row

  Index column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<Index>(i);
    return -1;
  }

  /// Requires the given version when the file declares one; rejects others.
  void expect_version(std::string_view expected, bool required) const {
    if (format_version.empty()) {
      if (required) throw ParseError(source, 1, "missing format version, expected '" + std::string(expected) + "'");
      return;
    }
    if (format_version != expected)
      throw ParseError(source, 1, "unsupported format version '" + format_version + "', expected '" +
                                      std::string(expected) + "'");
  }

  double number(std::size_t row, Index col) const {
    const auto& cell = rows[row].at(static_cast<std::size_t>(col));
    auto v = parse_double(cell);
    if (!v)
      throw ParseError(source, row_lines[row], "column '" + header[static_cast<std::size_t>(col)] + "': '" + cell +
                                                   "' is not a number");
    return *v;
  }

  /// Numeric block of the given columns, one matrix row per table row.
  Matrix numbers(const std::vector<Index>& cols) const {
    Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < cols.size(); ++c) out(static_cast<Index>(r), static_cast<Index>(c)) = number(r, cols[c]);
    return out;
  }
};

inline CsvTable parse_csv(std::istream& in, const std::string& source) {
  CsvTable t;
  t.source = source;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (have_header) throw ParseError(source, line_no, "comment after the header line");
      std::istringstream ss(line.substr(1));
      std::string tok;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq != std::string::npos) {
          t.meta[tok.substr(0, eq)] = tok.substr(eq + 1);
        } else if (tok.find('/') != std::string::npos && t.format_version.empty()) {
          t.format_version = tok;
        }
      }
      continue;
    }
    auto cells = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size())
      throw ParseError(source, line_no, "expected " + std::to_string(t.header.size()) + " fields, found " +
                                            std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.row_lines.push_back(line_no);
  }
  if (!have_header) throw ParseError(source, line_no, "missing header line");
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return parse_csv(in, path.string());
}

/// Builds CSV text; all writers go through this so output bytes depend only
/// on the values written.
class CsvWriter {
 public:
  CsvWriter(std::string_view format_version, const std::vector<std::pair<std::string, std::string>>& meta) {
    out_ << "# " << format_version;
    for (const auto& [k, v] : meta) out_ << ' ' << k << '=' << v;
    out_ << '\n';
  }

  void header(const std::vector<std::string>& cols) { row(cols); }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  template <class Derived>
  void numeric_row(const Eigen::DenseBase<Derived>& values, const std::vector<std::string>& prefix = {}) {
    std::size_t i = 0;
    for (const auto& p : prefix) out_ << (i++ ? "," : "") << p;
    for (Index c = 0; c < values.size(); ++c) out_ << (i++ ? "," : "") << format_double(values.derived()(c));
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace facial_basis
