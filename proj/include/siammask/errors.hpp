#pragma once

#include <stdexcept>
#include <string>

namespace siammask {

/// Raised by box-generation routines that need at least one foreground pixel.
class EmptyMaskError : public std::invalid_argument {
 public:
  explicit EmptyMaskError(const std::string& what) : std::invalid_argument(what) {}
};

/// Two operands disagree on size or channel layout.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// A configuration, checkpoint or manifest could not be accepted.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace siammask
