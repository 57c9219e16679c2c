#pragma once

#include <stdexcept>
#include <string>

namespace stmixer {

/// Base class for every error raised by this library.
class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shape disagreement; the message names both offending shapes.
class DimensionError : public Error {
  using Error::Error;
};

/// Invalid spatial arithmetic: degenerate boxes, kernels larger than the
/// padded input, indivisible frame sizes.
class GeometryError : public Error {
  using Error::Error;
};

/// Bad or inconsistent configuration values.
class ConfigError : public Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
  using Error::Error;
};

/// Synthetic data generation could not satisfy the requested constraints.
class GenerationError : public Error {
  using Error::Error;
};

/// Malformed files: checkpoints, manifests, config files.
class IoError : public Error {
  using Error::Error;
};

/// Command-line usage problems (missing flags, unknown options).
class UsageError : public Error {
  using Error::Error;
};

}  // namespace stmixer
