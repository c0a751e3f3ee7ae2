#include "fesloop/errors.hpp"

namespace fesloop {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FewerThanThreeMarkers: return "FewerThanThreeMarkers";
    case ErrorCode::CollinearMarkers: return "CollinearMarkers";
    case ErrorCode::LabelMismatch: return "LabelMismatch";
    case ErrorCode::MarkersNotStationary: return "MarkersNotStationary";
    case ErrorCode::InsufficientStaticSpan: return "InsufficientStaticSpan";
    case ErrorCode::RegistrationFailed: return "RegistrationFailed";
    case ErrorCode::EmptyAnteriorSet: return "EmptyAnteriorSet";
    case ErrorCode::InvalidCloud: return "InvalidCloud";
    case ErrorCode::InvalidTransform: return "InvalidTransform";
    case ErrorCode::InvalidPlane: return "InvalidPlane";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::MissingMarker: return "MissingMarker";
    case ErrorCode::NoCompleteCycle: return "NoCompleteCycle";
    case ErrorCode::InvalidCalib: return "InvalidCalib";
    case ErrorCode::InvalidProfile: return "InvalidProfile";
    case ErrorCode::NonPositiveDt: return "NonPositiveDt";
    case ErrorCode::NoThresholdFound: return "NoThresholdFound";
    case ErrorCode::InvalidScenario: return "InvalidScenario";
    case ErrorCode::InvalidCondition: return "InvalidCondition";
    case ErrorCode::InvalidMuscle: return "InvalidMuscle";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::TooFewCycles: return "TooFewCycles";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::UnsortedLog: return "UnsortedLog";
    case ErrorCode::MismatchedScenario: return "MismatchedScenario";
    case ErrorCode::MissingCalibration: return "MissingCalibration";
    case ErrorCode::MissingTraces: return "MissingTraces";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

}  // namespace fesloop
