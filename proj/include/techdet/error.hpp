#pragma once

#include <stdexcept>
#include <string>

namespace techdet {

// Bad input data or arguments: malformed files, unknown labels, shape
// mismatches. The CLI maps these to exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable or structurally invalid file (bad magic, truncated payload).
class FormatError : public InputError {
 public:
  using InputError::InputError;
};

// Inconsistent configuration, e.g. an FCN head that does not reach the
// expected number of output frames.
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// Non-finite values during training or inference. Exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace techdet
