#include "hsdf/error.hpp"

namespace hsdf {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AngleNearPi: return "AngleNearPi";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonScalarOutput: return "NonScalarOutput";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::EmptyObservations: return "EmptyObservations";
    case ErrorCode::MissingEncoderWeights: return "MissingEncoderWeights";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::InsufficientScenes: return "InsufficientScenes";
    case ErrorCode::MissingDecoder: return "MissingDecoder";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::Uncovered: return "Uncovered";
    case ErrorCode::SensorInsideSurface: return "SensorInsideSurface";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace hsdf
