#pragma once

#include <stdexcept>
#include <string>

namespace cseg {

/// Raised when tensor extents are invalid or incompatible for an operation.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised for invalid network, loss, task or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Misuse of the autograd tape (non-scalar loss, detached loss, double backward).
class AutogradError : public std::logic_error {
 public:
  explicit AutogradError(const std::string& what) : std::logic_error(what) {}
};

/// A tensor produced during training contains NaN or Inf.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed tensor file, checkpoint archive or data manifest.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cseg
