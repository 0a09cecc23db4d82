#pragma once

#include <stdexcept>

namespace featviz {

// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor or layer extents do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed or truncated file contents (.fvnet, .fvt, PPM/PGM).
struct FormatError : Error {
  using Error::Error;
};

// Inconsistent user-supplied configuration: strides, windows, targets, ...
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite values, diverging optimizations.
struct NumericError : Error {
  using Error::Error;
};

// Broken internal invariant (corrupt switches, impossible state).
struct InvariantError : Error {
  using Error::Error;
};

}  // namespace featviz
