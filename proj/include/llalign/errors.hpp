#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace llalign {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad range, non-divisible voxel size, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Record/task inconsistencies, overlapping splits, missing fields.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Rejection sampling or template resampling ran out of attempts.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Text that does not follow a grammar; carries the character offset.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace llalign
