#pragma once

#include <stdexcept>
#include <string>

namespace ulab {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimensions or array lengths that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (non-scalar loss, unknown node, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. The message names the line or byte offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Dataset content unsuitable for the requested operation (uncovered class,
// empty class, empty forget set, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced during evaluation or optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ulab
