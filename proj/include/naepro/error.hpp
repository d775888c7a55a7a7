// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace naepro {

enum class ErrorKind {
  kDimension,
  kParse,
  kValidation,
  kConfig,
  kNumeric,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so the CLI can emit a
// stable machine-parsable prefix.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error(ErrorKind::kDimension, message) {}
};

// Parse failures remember where they happened. line == 0 means "not line based".
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& message)
      : Error(ErrorKind::kParse, format(source, line, message)), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  static std::string format(const std::string& source, std::size_t line, const std::string& message) {
    std::string out = source;
    if (line > 0) out += ":" + std::to_string(line);
    if (!out.empty()) out += ": ";
    return out + message;
  }

  std::size_t line_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message) : Error(ErrorKind::kValidation, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorKind::kConfig, message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error(ErrorKind::kNumeric, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorKind::kIo, message) {}
};

}  // namespace naepro
