#pragma once

#include <stdexcept>
#include <string>

namespace spicalib {

// Failure categories shared by the library and the CLI exit-code contract.
enum class ErrorKind {
  InvalidRange,            // malformed sampling interval or argument
  InvalidRotation,         // pose rejected: not a proper rotation
  MismatchedDimensions,    // image stacks disagree in size
  InsufficientFrames,      // fewer phase-shifted frames than the estimator needs
  ConfigError,             // malformed configuration or CLI usage
  CubeNotVisible,          // no ray hits the target shape
  InsufficientFaces,       // fewer than two cube faces visible
  DepthAtInfinity,         // projective depth vanished
  SingularIntrinsics,      // intrinsic matrix not invertible
  DegenerateNormalizer,    // device matrix normalizer entry vanished
  DegenerateRays,          // triangulation system too ill-conditioned
  MarkerNotFound,          // zero-order marker absent from the image
  TooFewPoints,            // not enough correspondences to solve
  SinglePlaneOnly,         // survivors coplanar, pose unsolvable
  DegenerateConfiguration, // projector solve lost rank
  RankDeficient,           // least-squares design matrix below full rank
  DegenerateInput,         // fit input degenerate (collinear/coplanar/...)
  SegmentationFailed,      // surface segmentation found no usable faces
  IoError,                 // file read/write failure
};

constexpr const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::InvalidRotation: return "InvalidRotation";
    case ErrorKind::MismatchedDimensions: return "MismatchedDimensions";
    case ErrorKind::InsufficientFrames: return "InsufficientFrames";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::CubeNotVisible: return "CubeNotVisible";
    case ErrorKind::InsufficientFaces: return "InsufficientFaces";
    case ErrorKind::DepthAtInfinity: return "DepthAtInfinity";
    case ErrorKind::SingularIntrinsics: return "SingularIntrinsics";
    case ErrorKind::DegenerateNormalizer: return "DegenerateNormalizer";
    case ErrorKind::DegenerateRays: return "DegenerateRays";
    case ErrorKind::MarkerNotFound: return "MarkerNotFound";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::SinglePlaneOnly: return "SinglePlaneOnly";
    case ErrorKind::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::SegmentationFailed: return "SegmentationFailed";
    case ErrorKind::IoError: return "IoError";
  }
  return "UnknownError";
}

// CLI exit classes: 0 success, 2 config, 3 render, 4 solver, 5 I/O.
constexpr int exit_class(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidRange:
    case ErrorKind::InvalidRotation:
    case ErrorKind::MismatchedDimensions:
    case ErrorKind::InsufficientFrames:
    case ErrorKind::ConfigError:
      return 2;
    case ErrorKind::CubeNotVisible:
    case ErrorKind::InsufficientFaces:
      return 3;
    case ErrorKind::IoError:
      return 5;
    default:
      return 4;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  const char* name() const { return kind_name(kind_); }
  int exit_code() const { return exit_class(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace spicalib
