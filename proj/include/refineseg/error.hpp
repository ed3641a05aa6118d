#pragma once

#include <stdexcept>
#include <string>

namespace refineseg {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kOutOfRange,
  kParse,
  kNotFound,
  kUnavailable,
  kNumeric,
  kIo,
};

const char* error_code_name(ErrorCode code);

// All library failures are reported through this exception type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace refineseg
