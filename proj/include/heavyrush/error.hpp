#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace heavyrush {

/// Machine-checkable category of every error the library raises.
enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  IndexOutOfRange,
  SelfLoop,
  EmptyGraph,
  ParameterOutOfRange,
  NonPositiveKappa,
  IsolatedArea,
  NotPositiveDefinite,
  SizeLimitExceeded,
  GradientUnavailable,
  InitializationFailure,
  InsufficientDraws,
  EmptyMask,
  KappaAbsent,
  ZeroPopulation,
  NonPositiveOffset,
  MissingColumn,
  NonContiguousIndex,
  NegativeCount,
  MissingCell,
  TimeVaryingOffset,
  ConstantCovariate,
  ParseError,
  SchemaViolation,
  IoError,
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::ParameterOutOfRange: return "ParameterOutOfRange";
    case ErrorCode::NonPositiveKappa: return "NonPositiveKappa";
    case ErrorCode::IsolatedArea: return "IsolatedArea";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SizeLimitExceeded: return "SizeLimitExceeded";
    case ErrorCode::GradientUnavailable: return "GradientUnavailable";
    case ErrorCode::InitializationFailure: return "InitializationFailure";
    case ErrorCode::InsufficientDraws: return "InsufficientDraws";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::KappaAbsent: return "KappaAbsent";
    case ErrorCode::ZeroPopulation: return "ZeroPopulation";
    case ErrorCode::NonPositiveOffset: return "NonPositiveOffset";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonContiguousIndex: return "NonContiguousIndex";
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::TimeVaryingOffset: return "TimeVaryingOffset";
    case ErrorCode::ConstantCovariate: return "ConstantCovariate";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/**
 * @brief Exception carrying an ErrorCode alongside a human-readable message.
 *
 * All failures raised by the library are of this type so callers can branch
 * on `code()` without parsing messages.
 */
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) {
    fail(code, message);
  }
}

}  // namespace heavyrush
