#pragma once

#include <stdexcept>
#include <string>

namespace lesdet {

enum class ErrorKind {
  InvalidArgument,
  Shape,
  Format,
  Io,
  State,
  Mismatch,
  Config,
};

/// Base class for every error the library raises. The kind maps 1:1 onto the
/// status codes of the C API and the exit codes of the CLI.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error(ErrorKind::InvalidArgument, what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::Format, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what) : Error(ErrorKind::State, what) {}
};

// Artifacts produced from different inputs were combined.
class MismatchError : public Error {
 public:
  explicit MismatchError(const std::string& what)
      : Error(ErrorKind::Mismatch, what) {}
};

// Experiment configuration that does not match the documented schema.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

}  // namespace lesdet
