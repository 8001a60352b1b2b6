#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace srf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents, ranks or channel counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyper-parameter or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Mixing 32-bit and 64-bit tensors in one operation.
class DTypeError : public Error {
 public:
  using Error::Error;
};

/// A reduction or sampler received nothing to work on (all pixels ignored, no positives, ...).
class EmptyBatchError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Checkpoint contents do not match the network being restored.
class CheckpointMismatchError : public Error {
 public:
  CheckpointMismatchError(const std::string& what, std::string parameter)
      : Error(what), parameter_(std::move(parameter)) {}
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

}  // namespace srf
