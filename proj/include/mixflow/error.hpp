#pragma once

#include <stdexcept>
#include <string>

namespace mixflow {

/// Base error. The exit code maps onto the CLI contract
/// (2 parse, 3 validation/format, 4 simulation failure).
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code) : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(what, 2) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what, 3) {}
};

class SimulationError : public Error {
 public:
  explicit SimulationError(const std::string& what) : Error(what, 4) {}
};

}  // namespace mixflow
