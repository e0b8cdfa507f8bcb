// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sppft {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A sparsity pattern or rank does not fit the layer it is applied to.
class PatternError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside its documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// An operation was called in a state that cannot support it.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated serialized data. `offset` is the byte position
/// at which decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long last_good_step)
      : Error(what), last_good_step_(last_good_step) {}

  /// Last step whose loss was finite, or -1 if none was.
  long last_good_step() const noexcept { return last_good_step_; }

 private:
  long last_good_step_;
};

}  // namespace sppft
