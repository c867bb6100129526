#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kscope {

// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A named on-chip resource (iCache, pCache, regfile, RAM bank, ...) would overflow.
class CapacityError : public std::runtime_error {
 public:
  CapacityError(std::string resource, const std::string& what)
      : std::runtime_error(what), resource_(std::move(resource)) {}
  const std::string& resource() const noexcept { return resource_; }

 private:
  std::string resource_;
};

// Malformed binary or text input (bad magic, truncation, version, corrupt field).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Assembly / model-file syntax error with a 1-based source position.
class SyntaxError : public std::runtime_error {
 public:
  SyntaxError(std::size_t line, std::size_t col, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ", col " + std::to_string(col) + ": " + msg),
        line_(line),
        col_(col) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t line_;
  std::size_t col_;
};

}  // namespace kscope
