#include "flare/error.hpp"

namespace flare {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::MissingFile: return "MissingFile";
  case ErrorCode::MagicMismatch: return "MagicMismatch";
  case ErrorCode::ShapeMismatch: return "ShapeMismatch";
  case ErrorCode::NonPositiveVariance: return "NonPositiveVariance";
  case ErrorCode::NonFiniteValue: return "NonFiniteValue";
  case ErrorCode::InvalidManifest: return "InvalidManifest";
  case ErrorCode::IoFailure: return "IoFailure";
  case ErrorCode::InvalidSpec: return "InvalidSpec";
  case ErrorCode::TruncationOutOfRange: return "TruncationOutOfRange";
  case ErrorCode::EmptySpatialExtent: return "EmptySpatialExtent";
  case ErrorCode::KTooLarge: return "KTooLarge";
  case ErrorCode::MinPtsTooLarge: return "MinPtsTooLarge";
  case ErrorCode::UnknownCluster: return "UnknownCluster";
  case ErrorCode::LengthMismatch: return "LengthMismatch";
  case ErrorCode::InvalidArgument: return "InvalidArgument";
  case ErrorCode::MissingArtifact: return "MissingArtifact";
  }
  return "Unknown";
}

} // namespace flare
