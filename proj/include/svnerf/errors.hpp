#pragma once

#include <stdexcept>
#include <string>

namespace svnerf {

// Precondition violated on a numeric argument (bad dims, z <= 0, N < 2, ...).
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-invertible intrinsics, non-orthonormal rotation, and similar.
class CameraError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BehindCameraError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Missing or malformed files on disk.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the trainer when the loss stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace svnerf
