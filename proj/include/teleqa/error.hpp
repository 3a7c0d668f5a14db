#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace teleqa {

// Error classes map one-to-one onto CLI exit codes.
enum class ErrorKind { config = 2, data = 3, convergence = 4, external = 5 };

enum class Errc {
  // frame-io
  malformed_header,
  truncated_frame,
  unsupported_colorspace,
  frame_size,
  empty_clip,
  odd_dimensions,
  // metrics / features
  dimension_mismatch,
  frame_count_mismatch,
  plane_too_small,
  insufficient_resolution,
  // generic
  invalid_argument,
  non_finite,
  empty_input,
  out_of_range,
  zero_variance,
  key_mismatch,
  io,
  // svr
  not_converged,
  version_mismatch,
  schema_version,
  corrupted_payload,
  // dataset
  unknown_category,
  duplicate_entry,
  dangling_reference,
  closed_set,
  too_few_scenes,
  validation_empty,
  unknown_asset,
  template_error,
  encoder_failed,
  missing_output,
  // study
  wrong_phase,
  out_of_order,
  token_reused,
  duplicate_submission,
  missing_items,
  rejected,
  not_found,
  unauthorized,
};

std::string_view errc_name(Errc code) noexcept;
ErrorKind errc_kind(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return errc_kind(code_); }
  int exit_code() const noexcept { return static_cast<int>(kind()); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace teleqa
