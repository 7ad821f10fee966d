#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace policyscope {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A required column or key is absent from an input file.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& column)
      : Error("missing required column '" + column + "'"), column_(column) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

/// Malformed input at a known line.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  DimensionError(std::size_t expected, std::size_t got)
      : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
              std::to_string(got)) {}
};

/// Persisted artifact has the wrong format tag, version, or structure.
class ModelFormatError : public Error {
 public:
  using Error::Error;
};

/// Input violates a documented precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace policyscope
