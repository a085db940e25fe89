#pragma once

// Minimal CSV/text helpers. Fields are unquoted; lines starting with '#'
// are comments.

#include "stmort/types.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace stmort {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Non-empty, non-comment lines with their 1-based line numbers.
inline std::vector<std::pair<std::size_t, std::string>> read_lines(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<std::pair<std::size_t, std::string>> out;
  std::size_t lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    std::string line = raw;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    out.emplace_back(lineno, std::move(line));
  }
  return out;
}

/// Parses a finite double; throws with context on failure.
inline double parse_double(std::string_view s, const std::string& context) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw ValidationError(context + ": not a number: '" + t + "'");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& context) {
  const std::string t = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ValidationError(context + ": not an integer: '" + t + "'");
  return v;
}

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::map<std::string, std::size_t> column;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  std::string where(std::size_t r) const { return path + ":" + std::to_string(line_numbers.at(r)); }

  bool has_column(const std::string& name) const { return column.count(name) > 0; }

  void require_columns(std::initializer_list<const char*> names) const {
    for (const char* n : names)
      if (!has_column(n)) throw ValidationError(path + ": missing column '" + std::string(n) + "'");
  }

  const std::string& get(std::size_t r, const std::string& name) const {
    return rows.at(r).at(column.at(name));
  }
  double number(std::size_t r, const std::string& name) const {
    return parse_double(get(r, name), where(r) + " column " + name);
  }
  long long integer(std::size_t r, const std::string& name) const {
    return parse_int(get(r, name), where(r) + " column " + name);
  }
  std::optional<double> optional_number(std::size_t r, const std::string& name) const {
    const std::string& v = get(r, name);
    if (trim(v).empty()) return std::nullopt;
    return number(r, name);
  }
};

inline CsvTable read_csv(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("file not found: " + path);
  CsvTable t;
  t.path = path;
  const auto lines = read_lines(path);
  if (lines.empty()) throw ValidationError(path + ": empty file, expected a header line");
  for (const auto& h : split(lines.front().second, ',')) t.header.push_back(trim(h));
  for (std::size_t i = 0; i < t.header.size(); ++i) t.column[t.header[i]] = i;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    auto fields = split(lines[k].second, ',');
    if (fields.size() != t.header.size())
      throw ValidationError(path + ":" + std::to_string(lines[k].first) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " + std::to_string(fields.size()));
    for (auto& f : fields) f = trim(f);
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(lines[k].first);
  }
  return t;
}

/// Shortest round-trip decimal representation.
inline std::string format_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

/// Writes via a temporary sibling file and renames it over the target.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp);
    out << content;
    if (!out) throw ValidationError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace stmort
