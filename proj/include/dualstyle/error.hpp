#pragma once

#include <stdexcept>
#include <string>

namespace dualstyle {

enum class ErrorCode {
  EmptyLine,
  InvalidSpec,
  NonScalarLoss,
  NaNDetected,
  ShapeMismatch,
  EmptySequence,
  EmptyList,
  LengthMismatch,
  MissingReference,
  BadCheckpoint,
  BadConfig,
  Io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyLine: return "EmptyLine";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NaNDetected: return "NaNDetected";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingReference: return "MissingReference";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dualstyle
