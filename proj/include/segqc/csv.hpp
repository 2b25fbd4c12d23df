#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "segqc/error.hpp"

namespace segqc {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string format_number(double x, const char* fmt = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, x);
  return buf;
}

inline std::string format_optional(const std::optional<double>& x, const char* fmt = "%.9g") {
  return x ? format_number(*x, fmt) : std::string();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return std::nullopt;
  }
  std::size_t column(const std::string& name) const {
    auto i = find(name);
    if (!i) throw DataError("CSV has no column '" + name + "'");
    return *i;
  }
};

// Lines starting with '#' are comments. Quoted fields may hold commas and
// doubled quotes but not newlines.
inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          fields.back() += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.emplace_back();
      } else {
        fields.back() += c;
      }
    }
    if (quoted) throw DataError("unterminated quote in CSV line: " + line);
    if (t.header.empty()) {
      t.header = std::move(fields);
    } else {
      if (fields.size() != t.header.size()) throw DataError("CSV row has " + std::to_string(fields.size()) +
                                                            " fields, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(fields));
    }
  }
  return t;
}

}  // namespace segqc
