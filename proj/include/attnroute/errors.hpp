#pragma once

#include <stdexcept>
#include <string>

namespace attnroute {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Array shapes do not line up for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A softmax row (or attention row) has no admissible entry left.
class InvalidMaskError : public Error {
 public:
  using Error::Error;
};

/// A precondition on the caller's side was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A solution or action breaks a routing constraint.
class FeasibilityError : public Error {
 public:
  using Error::Error;
};

/// Instance is larger than an exact solver is allowed to handle.
class CapacityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training produced non-finite parameters.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace attnroute
