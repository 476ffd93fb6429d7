#pragma once

#include <stdexcept>
#include <string>

namespace acr {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// An object was used in the wrong lifecycle state (e.g. reading adjoints
/// before backward ran).
class StateError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced, or a gradient check failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class UnsupportedTransformError : public Error {
 public:
  using Error::Error;
};

/// A dense oracle would exceed its configured size cap.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// Malformed files, configs or I/O failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace acr
