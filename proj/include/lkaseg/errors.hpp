#pragma once

#include <stdexcept>
#include <string>

namespace lkaseg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer geometry that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values found in activations, parameters or gradients (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// File system and file format failures (exit code 4).
class IoError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public IoError {
 public:
  enum class Kind { kFormat, kVersion, kCrc, kManifest };

  CheckpointError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace lkaseg
