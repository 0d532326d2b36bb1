#pragma once

#include <stdexcept>
#include <string>

namespace geo4d {

enum class ErrorCode {
  kInvalidIntrinsics,
  kInfinitePoint,
  kInvalidScale,
  kVideoTooShort,
  kInvalidStride,
  kRankDeficient,
  kDegenerateRays,
  kDecomposition,
  kDegenerateCorrespondence,
  kDisconnectedGroups,
  kBehindCamera,
  kInsufficientPoints,
  kPnpFailure,
  kNumerical,
  kLengthMismatch,
  kEmptyFrame,
  kInvalidArgument,
  kIo,
  kUnsupportedVersion,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidIntrinsics: return "invalid-intrinsics";
    case ErrorCode::kInfinitePoint: return "infinite-point";
    case ErrorCode::kInvalidScale: return "invalid-scale";
    case ErrorCode::kVideoTooShort: return "video-too-short";
    case ErrorCode::kInvalidStride: return "invalid-stride";
    case ErrorCode::kRankDeficient: return "rank-deficient";
    case ErrorCode::kDegenerateRays: return "degenerate-rays";
    case ErrorCode::kDecomposition: return "decomposition";
    case ErrorCode::kDegenerateCorrespondence: return "degenerate-correspondence";
    case ErrorCode::kDisconnectedGroups: return "disconnected-groups";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kInsufficientPoints: return "insufficient-points";
    case ErrorCode::kPnpFailure: return "pnp-failure";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kEmptyFrame: return "empty-frame";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kUnsupportedVersion: return "unsupported-version";
  }
  return "unknown";
}

// All library failures are reported through this exception; `code()` lets
// callers (and the CLI exit-code mapping) branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace geo4d
