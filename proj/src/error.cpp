#include "teleqa/error.hpp"

namespace teleqa {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_header: return "malformed_header";
    case Errc::truncated_frame: return "truncated_frame";
    case Errc::unsupported_colorspace: return "unsupported_colorspace";
    case Errc::frame_size: return "frame_size";
    case Errc::empty_clip: return "empty_clip";
    case Errc::odd_dimensions: return "odd_dimensions";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::frame_count_mismatch: return "frame_count_mismatch";
    case Errc::plane_too_small: return "plane_too_small";
    case Errc::insufficient_resolution: return "insufficient_resolution";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::non_finite: return "non_finite";
    case Errc::empty_input: return "empty_input";
    case Errc::out_of_range: return "out_of_range";
    case Errc::zero_variance: return "zero_variance";
    case Errc::key_mismatch: return "key_mismatch";
    case Errc::io: return "io";
    case Errc::not_converged: return "not_converged";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::schema_version: return "schema_version";
    case Errc::corrupted_payload: return "corrupted_payload";
    case Errc::unknown_category: return "unknown_category";
    case Errc::duplicate_entry: return "duplicate_entry";
    case Errc::dangling_reference: return "dangling_reference";
    case Errc::closed_set: return "closed_set";
    case Errc::too_few_scenes: return "too_few_scenes";
    case Errc::validation_empty: return "validation_empty";
    case Errc::unknown_asset: return "unknown_asset";
    case Errc::template_error: return "template_error";
    case Errc::encoder_failed: return "encoder_failed";
    case Errc::missing_output: return "missing_output";
    case Errc::wrong_phase: return "wrong_phase";
    case Errc::out_of_order: return "out_of_order";
    case Errc::token_reused: return "token_reused";
    case Errc::duplicate_submission: return "duplicate_submission";
    case Errc::missing_items: return "missing_items";
    case Errc::rejected: return "rejected";
    case Errc::not_found: return "not_found";
    case Errc::unauthorized: return "unauthorized";
  }
  return "unknown";
}

ErrorKind errc_kind(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument:
    case Errc::template_error:
    case Errc::version_mismatch:
    case Errc::schema_version:
    case Errc::unauthorized:
      return ErrorKind::config;
    case Errc::not_converged:
      return ErrorKind::convergence;
    case Errc::encoder_failed:
    case Errc::missing_output:
      return ErrorKind::external;
    default:
      return ErrorKind::data;
  }
}

}  // namespace teleqa
