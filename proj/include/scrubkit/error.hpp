#pragma once

#include <stdexcept>
#include <string>

namespace scrub {

enum class ErrorCode {
  invalid_argument,
  invalid_spec,
  dimension_mismatch,
  divergence,
  io_error,
  empty_result,
  bad_config,
  internal,
};

const char* error_code_name(ErrorCode code);

// All recoverable failures surface as this exception. `epoch` is set for
// failures inside a training loop (e.g. a non-finite loss).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, int epoch = -1)
      : std::runtime_error(message), code_(code), epoch_(epoch) {}

  ErrorCode code() const { return code_; }
  int epoch() const { return epoch_; }
  const char* code_name() const { return error_code_name(code_); }

 private:
  ErrorCode code_;
  int epoch_;
};

}  // namespace scrub
