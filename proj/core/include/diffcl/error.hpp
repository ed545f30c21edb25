#pragma once

#include <stdexcept>
#include <string>

namespace diffcl {

// Base for every error the library raises on purpose. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree, or an index is out of range.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input files, empty datasets, structural graph problems.
class DataError : public Error {
 public:
  using Error::Error;
};

// A non-finite value appeared in a loss, gradient or parameter.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffcl
