#pragma once

#include <stdexcept>
#include <string>

namespace flare {

// Numeric values are shared with the C API status codes.
enum class ErrorCode {
  MissingFile = 1,
  MagicMismatch = 2,
  ShapeMismatch = 3,
  NonPositiveVariance = 4,
  NonFiniteValue = 5,
  InvalidManifest = 6,
  IoFailure = 7,
  InvalidSpec = 8,
  TruncationOutOfRange = 9,
  EmptySpatialExtent = 10,
  KTooLarge = 11,
  MinPtsTooLarge = 12,
  UnknownCluster = 13,
  LengthMismatch = 14,
  InvalidArgument = 15,
  MissingArtifact = 16,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

} // namespace flare
