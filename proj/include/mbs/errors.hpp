#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mbs {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer shapes do not compose, or a tensor has the wrong shape for an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced a NaN or Inf from finite inputs.
class OverflowError : public Error {
 public:
  OverflowError(std::size_t layer, const std::string& what)
      : Error("non-finite value in layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// Misuse of a forward tape (e.g. backward called twice).
class TapeError : public Error {
 public:
  using Error::Error;
};

/// Gradient or state sets keyed differently from the parameter set.
class KeyMismatchError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument to a pure op (non-positive sizes, bad ranges, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Raised when not even a single sample fits next to the model in device memory.
class ModelDoesNotFitError : public Error {
 public:
  using Error::Error;
};

/// Malformed experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated binary input file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace mbs
