#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tminfer {

enum class ErrorCode {
  MalformedDocument,
  MissingField,
  InvalidValue,
  UnsupportedDtype,
  UnsupportedQuantization,
  ByteLengthMismatch,
  DuplicateWeightName,
  LabelCountMismatch,
  ShapeMismatch,
  EmptyInput,
  UnsupportedLayer,
  MissingWeight,
  UnboundWeights,
  UnsupportedFormat,
  CorruptImage,
  NotSquare,
  InvalidUrl,
  NotReady,
  FetchFailed,
  Timeout,
  CacheCorrupt,
  IoError,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure surfaced by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace tminfer
