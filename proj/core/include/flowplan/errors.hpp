#pragma once

#include <stdexcept>
#include <string>

namespace flowplan {

// Input rejected by a schema or invariant check. The CLI maps this to exit
// code 1; every other exception escaping a subcommand maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised for malformed inputs at a known line of a line-delimited file.
class LineError : public ValidationError {
 public:
  LineError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace flowplan
