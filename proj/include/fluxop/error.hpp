#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fluxop {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration (ranges, plans, geometry).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or vector dimensions do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A model was handed data that violates its training protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

/// A required input file is missing or unreadable.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Raised when training produces non-finite values. Carries the step index.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Raised when a corpus entry fails to simulate. Carries the entry index.
class SimulationError : public Error {
 public:
  SimulationError(const std::string& what, std::size_t entry)
      : Error("entry " + std::to_string(entry) + ": " + what), entry_(entry) {}
  std::size_t entry() const noexcept { return entry_; }

 private:
  std::size_t entry_;
};

// File container errors. Each failure mode has its own type.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace fluxop
