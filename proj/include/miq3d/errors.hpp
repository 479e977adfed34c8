#pragma once

#include <stdexcept>
#include <string>

namespace miq3d {

// Every error raised by the library derives from Error so callers can catch
// one type at the boundary (CLI, HTTP service) and map the subtype.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (extents, kernel sizes, sub-config invariants).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Point prompt outside the volume.
class PromptError : public Error {
 public:
  using Error::Error;
};

// Non-finite value crossing an op boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Synthetic data generator could not place the requested instances.
class GenerationError : public Error {
 public:
  using Error::Error;
};

// Checkpoint does not match the requested configuration.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace miq3d
