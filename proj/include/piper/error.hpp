#pragma once

#include <stdexcept>
#include <string>

namespace piper {

enum class ErrorCode {
  InvalidGeometry,
  DimensionMismatch,
  DegenerateProblem,
  ContractViolation,
  InvalidArgument,
  Format,
  Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidGeometry: return "invalid geometry";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::DegenerateProblem: return "degenerate problem";
    case ErrorCode::ContractViolation: return "contract violation";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Io: return "i/o error";
  }
  return "error";
}

}  // namespace piper
