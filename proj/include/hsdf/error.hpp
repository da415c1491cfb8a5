#pragma once

#include <stdexcept>
#include <string>

namespace hsdf {

/// Failure classes surfaced by the library. The CLI maps each to a one-line
/// diagnostic and a nonzero exit code.
enum class ErrorCode {
  AngleNearPi,
  ShapeMismatch,
  NonScalarOutput,
  OutOfBounds,
  IoError,
  FormatVersionMismatch,
  EmptyObservations,
  MissingEncoderWeights,
  TooFewPoints,
  InsufficientScenes,
  MissingDecoder,
  EmptyGraph,
  Uncovered,
  SensorInsideSurface,
  LengthMismatch,
  EmptySet,
  BadConfig,
  InvalidArgument,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hsdf
