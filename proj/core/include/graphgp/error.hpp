#pragma once

#include <stdexcept>
#include <string>

namespace graphgp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document (edge list, CSV, JSON).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? what + " at line " + std::to_string(line) : what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Argument outside the documented domain of an operation.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: non-convergence, loss of definiteness, NaN.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace graphgp
