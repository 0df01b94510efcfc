#pragma once

#include <stdexcept>
#include <string>

namespace pgrad {

/// Bad argument values: dimension mismatch, non-positive sigma, empty sets.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The objective does not expose a derivative or evaluation mode the caller needs.
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The perturbation batch has the wrong distribution for the estimator.
class InvalidDistributionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed message set in the seed-sharing protocol.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A message or replica refers to a different round than expected.
class StaleRoundError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pgrad
