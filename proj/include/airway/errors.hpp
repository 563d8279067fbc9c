#pragma once

#include <stdexcept>
#include <string>

namespace airway {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mismatched grid/tensor dimensions between operands.
struct ShapeError : Error {
  using Error::Error;
};

/// File or stream problems: missing files, truncated payloads, bad sidecars.
struct IoError : Error {
  using Error::Error;
};

/// Values outside their domain: mask bytes not in {0,1}, weights out of range,
/// non-finite floats, geometry that does not fit the requested grid.
struct DomainError : Error {
  using Error::Error;
};

/// Malformed or inconsistent configuration / schema.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace airway
