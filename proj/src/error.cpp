#include "ess/error.hpp"

namespace ess {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kEmptyBatch: return "empty_batch";
  }
  return "unknown";
}

const char* to_string(FormatIssue issue) noexcept {
  switch (issue) {
    case FormatIssue::kBadMagic: return "bad_magic";
    case FormatIssue::kUnsupportedVersion: return "unsupported_version";
    case FormatIssue::kTruncated: return "truncated";
    case FormatIssue::kLabelOutOfRange: return "label_out_of_range";
    case FormatIssue::kBadShape: return "bad_shape";
  }
  return "unknown";
}

}  // namespace ess
