#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace soe {

enum class ErrorCode {
  InvalidInput,
  DegenerateSpectrum,
  DegenerateSamples,
  WindowTooSmall,
  TrajectoryTooShort,
  InsufficientSeries,
  NoCandidates,
  DivisionByZero,
  IoError,
  FormatError,
  UnsupportedVersion,
  BackendError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::DegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::DegenerateSamples: return "DegenerateSamples";
    case ErrorCode::WindowTooSmall: return "WindowTooSmall";
    case ErrorCode::TrajectoryTooShort: return "TrajectoryTooShort";
    case ErrorCode::InsufficientSeries: return "InsufficientSeries";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::BackendError: return "BackendError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace soe
