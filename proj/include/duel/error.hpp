#pragma once

#include <stdexcept>
#include <string>

namespace duel {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not compose.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a graph node.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// API called in the wrong order or with an inconsistent object.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed data: bad file lines, out-of-vocabulary ids, invalid arguments.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace duel
