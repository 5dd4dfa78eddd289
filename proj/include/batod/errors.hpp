#pragma once

#include <stdexcept>
#include <string>

namespace batod {

enum class ErrorCode {
  missing_file,
  undecodable_image,
  label_gap,
  empty_manifest,
  bad_label,
  precondition,
  capacity,
  bad_magic,
  version_mismatch,
  shape_mismatch,
  truncated,
  invariant_violation,
  training_failure,
  degenerate_class,
  singular_geometry,
  missing_artifact,
  stale_pipeline,
  config_error,
  io_error,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::missing_file: return "missing_file";
    case ErrorCode::undecodable_image: return "undecodable_image";
    case ErrorCode::label_gap: return "label_gap";
    case ErrorCode::empty_manifest: return "empty_manifest";
    case ErrorCode::bad_label: return "bad_label";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::capacity: return "capacity";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::invariant_violation: return "invariant_violation";
    case ErrorCode::training_failure: return "training_failure";
    case ErrorCode::degenerate_class: return "degenerate_class";
    case ErrorCode::singular_geometry: return "singular_geometry";
    case ErrorCode::missing_artifact: return "missing_artifact";
    case ErrorCode::stale_pipeline: return "stale_pipeline";
    case ErrorCode::config_error: return "config_error";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

/// Every failure in the library throws this; `code()` identifies the class of
/// failure so callers (and tests) can match on it instead of parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace batod
