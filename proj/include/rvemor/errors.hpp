#pragma once

#include <stdexcept>
#include <string>

namespace rvemor {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or out-of-range input (CLI exit code 2).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Non-positive Jacobian of an elastic or total deformation gradient.
class InversionError : public Error {
public:
  using Error::Error;
};

/// Local or global Newton iteration failed (CLI exit code 3).
class NonConvergenceError : public Error {
public:
  using Error::Error;
};

/// Inconsistent shapes, meshes, fingerprints or file contents (CLI exit code 4).
class DataMismatchError : public Error {
public:
  using Error::Error;
};

/// Requested basis size exceeds the numerical rank of the snapshots.
class RankError : public DataMismatchError {
public:
  using DataMismatchError::DataMismatchError;
};

} // namespace rvemor
