#include "scrubkit/error.hpp"

namespace scrub {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_spec: return "invalid_spec";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::empty_result: return "empty_result";
    case ErrorCode::bad_config: return "bad_config";
    case ErrorCode::internal: return "internal";
  }
  return "unknown";
}

}  // namespace scrub
