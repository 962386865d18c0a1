#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slidegcd {

enum class ErrorCode {
  DimensionMismatch,
  DomainError,
  NonFiniteInput,
  EmptyInput,
  NotScalar,
  CapacityExceeded,
  HeadMismatch,
  BufferOverCapacity,
  IndexOutOfRange,
  LabelOutOfRange,
  NonDistributionInput,
  NonPositiveTemperature,
  EmptyBuffer,
  DegenerateLabels,
  InsufficientClassSamples,
  IoError,
  BadMagic,
  TruncatedFile,
  ShapeOverflow,
  ParseError,
  InvalidValue,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::HeadMismatch: return "HeadMismatch";
    case ErrorCode::BufferOverCapacity: return "BufferOverCapacity";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NonDistributionInput: return "NonDistributionInput";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::EmptyBuffer: return "EmptyBuffer";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::InsufficientClassSamples: return "InsufficientClassSamples";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ShapeOverflow: return "ShapeOverflow";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidValue: return "InvalidValue";
  }
  return "Unknown";
}

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// InvalidValue carrying the offending config key.
class InvalidValueError : public Error {
 public:
  InvalidValueError(std::string key, const std::string& what)
      : Error(ErrorCode::InvalidValue, key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace slidegcd
