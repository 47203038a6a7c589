#pragma once

#include <charconv>
#include <cmath>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "p2prisk/errors.hpp"

namespace p2prisk {

// Minimal RFC-4180-style CSV support: quoted fields may contain commas,
// quotes and newlines; quotes are escaped by doubling; LF and CRLF both
// accepted.

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

namespace detail {

inline std::vector<std::vector<std::string>> parse_csv_records(const std::string& content) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string current;
  bool in_quotes = false;
  bool field_started = false;

  auto flush_field = [&] {
    fields.push_back(std::move(current));
    current.clear();
    field_started = false;
  };
  auto flush_record = [&] {
    flush_field();
    // skip blank lines
    if (fields.size() > 1 || !fields[0].empty()) records.push_back(std::move(fields));
    fields = {};
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          current.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        current.push_back(c);
      }
    } else if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      flush_field();
    } else if (c == '\n') {
      if (!current.empty() && current.back() == '\r') current.pop_back();
      flush_record();
    } else {
      current.push_back(c);
      field_started = true;
    }
  }
  if (in_quotes) throw data_error("csv: unterminated quoted field");
  if (!current.empty() || !fields.empty()) {
    if (!current.empty() && current.back() == '\r') current.pop_back();
    flush_record();
  }
  return records;
}

}  // namespace detail

/// Reads a whole CSV stream; the first record is the header.
inline CsvTable read_csv(std::istream& in) {
  std::string content(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  auto records = detail::parse_csv_records(content);
  if (records.empty()) throw data_error("csv: missing header row");
  CsvTable table;
  table.header = std::move(records.front());
  table.rows.assign(std::make_move_iterator(records.begin() + 1),
                    std::make_move_iterator(records.end()));
  return table;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out.push_back('"');
  return out;
}

/// Shortest round-trip decimal form; reading it back recovers the exact bits.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);
}

inline std::string_view trim(std::string_view text) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!text.empty() && is_space(text.front())) text.remove_prefix(1);
  while (!text.empty() && is_space(text.back())) text.remove_suffix(1);
  return text;
}

/// Parses a full-field finite double; anything else (empty, partial matches,
/// nan/inf spellings) is nullopt, the missing-value marker.
inline std::optional<double> parse_double(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto result = std::from_chars(first, last, value);
  if (result.ec != std::errc() || result.ptr != last) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace p2prisk
