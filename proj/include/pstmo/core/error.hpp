#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pstmo {

/// Failure category. The CLI maps these onto process exit codes.
enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  missing_file,
  unsupported_version,
  parse_error,
  non_finite,
  io_error,
  runtime,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::unsupported_version: return "unsupported_version";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::runtime: return "runtime";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for errors caused by bad inputs rather than a failure mid-run.
  bool is_validation() const noexcept {
    return code_ != ErrorCode::runtime && code_ != ErrorCode::io_error && code_ != ErrorCode::non_finite;
  }

 private:
  ErrorCode code_;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace pstmo
