#pragma once

#include <stdexcept>
#include <string>

namespace cloq {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad ranges, unknown enum values, malformed config files.
/// CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent input data: missing tensors, dimension mismatches,
/// malformed bundles. CLI exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: Cholesky/eigendecomposition breakdown, non-finite values
/// produced where finite ones are required. CLI exit code 4.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cloq
