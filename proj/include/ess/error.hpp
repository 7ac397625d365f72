#pragma once

#include <stdexcept>
#include <string>

namespace ess {

enum class ErrorCode {
  kInvalidArgument,  // caller violated a precondition
  kConfig,           // malformed or inconsistent configuration
  kIo,               // file could not be opened/written
  kFormat,           // file contents do not match the expected layout
  kNumerical,        // non-finite values or an undefined quantity
  kEmptyBatch,       // no non-ignored pixels: the mean loss is undefined
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class FormatIssue { kBadMagic, kUnsupportedVersion, kTruncated, kLabelOutOfRange, kBadShape };

const char* to_string(FormatIssue issue) noexcept;

class FormatError : public Error {
 public:
  FormatError(FormatIssue issue, const std::string& what)
      : Error(ErrorCode::kFormat, what), issue_(issue) {}
  FormatIssue issue() const noexcept { return issue_; }

 private:
  FormatIssue issue_;
};

[[noreturn]] inline void throw_invalid(const std::string& what) {
  throw Error(ErrorCode::kInvalidArgument, what);
}

}  // namespace ess
