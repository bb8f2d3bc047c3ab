#pragma once

#include <stdexcept>
#include <string>

namespace narxsel {

enum class ErrorCode {
  invalid_argument,
  empty_request,
  shape_mismatch,
  insufficient_data,
  degenerate_feature,
  divergence,
  numerical,
  stale_trace,
  out_of_range,
  conditioning,
  training_failure,
  pipeline_mismatch,
  parse,
  io,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries a machine-readable code so the
/// harness can classify run failures without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace narxsel
