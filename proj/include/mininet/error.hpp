#pragma once

#include <stdexcept>
#include <string>

namespace mininet {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or hyperparameters. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mininet
