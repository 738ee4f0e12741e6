#pragma once

#include <stdexcept>
#include <string>

namespace must {

/// Invalid user-supplied configuration. CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem or OS-level IO failure. CLI exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk artifact: bad magic, truncated payload, version or
/// count mismatch. CLI exit code 3.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Non-finite loss or gradient encountered during training. The trainer
/// writes a last-good checkpoint before raising this. CLI exit code 4.
class NanAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated tensor shape contract. Programming error, not user input.
class ShapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace must
