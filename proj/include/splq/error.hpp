#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace splq {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition (shape mismatch, stale state, ...).
class ContractError : public Error {
public:
  using Error::Error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class ArgumentError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

class RenderError : public Error {
public:
  RenderError(const std::string &what, std::size_t primitive)
      : Error(what + " (primitive " + std::to_string(primitive) + ")"), primitive_(primitive) {}
  std::size_t primitive() const { return primitive_; }

private:
  std::size_t primitive_;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Bad magic or malformed block structure.
class FormatError : public IoError {
public:
  FormatError(const std::string &what, std::uint64_t offset)
      : IoError(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

private:
  std::uint64_t offset_;
};

class VersionError : public IoError {
public:
  using IoError::IoError;
};

class TruncationError : public IoError {
public:
  TruncationError(const std::string &what, std::uint64_t offset)
      : IoError(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

private:
  std::uint64_t offset_;
};

} // namespace splq
