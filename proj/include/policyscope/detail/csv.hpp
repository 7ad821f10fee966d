#pragma once

// Minimal RFC-4180 reader/writer: quoted fields, doubled quotes, embedded
// newlines, CRLF line endings and a leading UTF-8 BOM.

#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "policyscope/error.hpp"

namespace policyscope::detail {

struct CsvRow {
  std::size_t line = 0;  // physical line on which the record starts (1-based)
  std::vector<std::string> fields;
};

class CsvReader {
 public:
  explicit CsvReader(std::istream& in, char delimiter = ',') : in_(in), delim_(delimiter) {}

  std::optional<CsvRow> next() {
    CsvRow row;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    bool field_was_quoted = false;
    row.line = line_;
    int ch;
    while ((ch = in_.get()) != std::char_traits<char>::eof()) {
      any = true;
      char c = static_cast<char>(ch);
      if (first_char_) {
        first_char_ = false;
        // skip a UTF-8 byte order mark
        if (static_cast<unsigned char>(c) == 0xEF && in_.peek() == 0xBB) {
          in_.get();
          if (in_.peek() == 0xBF) in_.get();
          continue;
        }
      }
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          field.push_back(c);
        }
        continue;
      }
      if (c == '"' && field.empty() && !field_was_quoted) {
        in_quotes = true;
        field_was_quoted = true;
      } else if (c == delim_) {
        row.fields.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
      } else if (c == '\r' && in_.peek() == '\n') {
        continue;
      } else if (c == '\n') {
        ++line_;
        row.fields.push_back(std::move(field));
        if (row.fields.size() == 1 && row.fields[0].empty() && !field_was_quoted) {
          // blank line
          row.fields.clear();
          row.line = line_;
          field.clear();
          any = false;
          continue;
        }
        return row;
      } else {
        field.push_back(c);
      }
    }
    if (in_quotes) throw ParseError(row.line, "unterminated quoted field");
    if (!any) return std::nullopt;
    row.fields.push_back(std::move(field));
    if (row.fields.size() == 1 && row.fields[0].empty() && !field_was_quoted) return std::nullopt;
    return row;
  }

 private:
  std::istream& in_;
  char delim_;
  std::size_t line_ = 1;
  bool first_char_ = true;
};

inline std::string csv_escape(std::string_view field, char delimiter = ',') {
  bool quote = field.find_first_of(std::string{delimiter} + "\"\r\n") != std::string_view::npos;
  if (!quote) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_csv_row(std::ostream& out, std::span<const std::string> fields,
                          char delimiter = ',') {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << delimiter;
    out << csv_escape(fields[i], delimiter);
  }
  out << '\n';
}

/// Lowercase and drop everything that is not a letter or digit, so "Author ID",
/// "author_id" and "AuthorId" compare equal.
inline std::string normalize_key(std::string_view s) {
  std::string out;
  for (char c : s) {
    auto u = static_cast<unsigned char>(c);
    if ((u >= 'a' && u <= 'z') || (u >= '0' && u <= '9')) out.push_back(c);
    else if (u >= 'A' && u <= 'Z') out.push_back(static_cast<char>(u - 'A' + 'a'));
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace policyscope::detail
