#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hvpr {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed input container. `position` is a byte offset for binary formats
// and a 1-based line number for text formats.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t position)
      : DataError(what), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Violated shape or argument contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvpr
