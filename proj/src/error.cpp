#include "tminfer/error.hpp"

namespace tminfer {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::UnsupportedQuantization: return "UnsupportedQuantization";
    case ErrorCode::ByteLengthMismatch: return "ByteLengthMismatch";
    case ErrorCode::DuplicateWeightName: return "DuplicateWeightName";
    case ErrorCode::LabelCountMismatch: return "LabelCountMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorCode::MissingWeight: return "MissingWeight";
    case ErrorCode::UnboundWeights: return "UnboundWeights";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::CorruptImage: return "CorruptImage";
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::InvalidUrl: return "InvalidUrl";
    case ErrorCode::NotReady: return "NotReady";
    case ErrorCode::FetchFailed: return "FetchFailed";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::CacheCorrupt: return "CacheCorrupt";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace tminfer
