#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hemadyn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file content.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A documented precondition of an operation does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Evaluation outside the mathematical domain of a model (e.g. C <= 0 in the
/// feedback term).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite state during ODE integration.
class IntegrationError : public Error {
 public:
  IntegrationError(double time, const std::string& what)
      : Error("integration failed at t=" + std::to_string(time) + ": " + what), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Non-finite value while training (loss, prediction or gradient component).
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(index >= 0 ? what + " (index " + std::to_string(index) + ")" : what), index_(index) {}

  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

}  // namespace hemadyn
