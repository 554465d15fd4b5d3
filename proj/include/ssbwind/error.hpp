#pragma once

#include <stdexcept>
#include <string>

namespace ssbwind {

// Base for every error raised by the library. The CLI maps the concrete
// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or arguments (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown: failed factorization, non-finite target, underflow (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

// File system or parse failures (exit code 4).
class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(std::size_t line, const std::string& field, const std::string& what)
      : IoError("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line_(line),
        field_(field) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

}  // namespace ssbwind
