#include "narxsel/error.hpp"

namespace narxsel {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::empty_request: return "empty_request";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::degenerate_feature: return "degenerate_feature";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::stale_trace: return "stale_trace";
    case ErrorCode::out_of_range: return "out_of_range";
    case ErrorCode::conditioning: return "conditioning";
    case ErrorCode::training_failure: return "training_failure";
    case ErrorCode::pipeline_mismatch: return "pipeline_mismatch";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

}  // namespace narxsel
