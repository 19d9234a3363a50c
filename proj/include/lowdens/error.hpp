#pragma once

#include <stdexcept>
#include <string>

namespace lowdens {

// Base for every failure raised by the library. The CLI maps the concrete
// type onto its exit-code contract.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (dimension mismatch, stale cache,
// out-of-range timestep, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad user-facing input: invalid config value, missing file, invalid spec.
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. Carries the 1-based line where parsing stopped.
class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InputError(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A NaN/Inf appeared in training or sampling.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace lowdens
