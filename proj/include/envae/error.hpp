#pragma once

#include <stdexcept>
#include <string>

namespace envae {

// Every failure raised by the library derives from Error. The CLI maps the
// concrete kind onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched dimensions between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad or missing input data (CSV contents, split preconditions, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a computation, or a factorization that failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace envae
