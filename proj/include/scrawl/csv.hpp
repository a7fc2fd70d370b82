#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "scrawl/common.hpp"

namespace scrawl {

// Minimal CSV dialect used by every on-disk table in this project: comma
// separated, no quoting, no escapes. Fields therefore must not contain commas;
// writers enforce that, readers just split.

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      return fields;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

inline double parse_double(std::string_view text, const std::string& context) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw config_error(context + ": not a number: '" + std::string(text) + "'");
  return value;
}

inline long parse_long(std::string_view text, const std::string& context) {
  long value = 0;
  const char* first = text.data();
  const char* last = first + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw config_error(context + ": not an integer: '" + std::string(text) + "'");
  return value;
}

// Deterministic float formatting for CSV output. %.10g is enough to make
// distinct runs byte-comparable without printing noise digits.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::string(buf);
}

// Reads a whole CSV file as rows of fields. Blank lines are skipped.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(std::move(line));
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : path_(path), out_(path) {
    if (!out_) throw io_error("cannot create " + path.string());
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].find(',') != std::string::npos)
        throw io_error("field with comma in " + path_.string());
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
    if (!out_) throw io_error("write failed: " + path_.string());
  }

  void flush() { out_.flush(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace scrawl
