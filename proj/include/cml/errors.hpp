#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cml {

/// Malformed input line. `line()` is 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Input that parses but cannot be used (empty after filtering, shape mismatch...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// No admissible negative could be produced for a user.
class SamplingError : public std::runtime_error {
 public:
  SamplingError(std::size_t user, const std::string& what)
      : std::runtime_error("user " + std::to_string(user) + ": " + what), user_(user) {}
  std::size_t user() const { return user_; }

 private:
  std::size_t user_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cml
