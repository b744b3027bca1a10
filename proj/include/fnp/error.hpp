#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fnp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument, bad configuration value or inconsistent shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations, diverging losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file. `section()` names the part that failed.
class FormatError : public Error {
 public:
  FormatError(std::string section, const std::string& what)
      : Error("format error in section '" + section + "': " + what), section_(std::move(section)) {}

  const std::string& section() const { return section_; }

 private:
  std::string section_;
};

}  // namespace fnp
