#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fesloop {

enum class ErrorCode {
  // geometry
  FewerThanThreeMarkers,
  CollinearMarkers,
  LabelMismatch,
  MarkersNotStationary,
  InsufficientStaticSpan,
  RegistrationFailed,
  EmptyAnteriorSet,
  InvalidCloud,
  InvalidTransform,
  InvalidPlane,
  // gait_state
  InsufficientHistory,
  MissingMarker,
  NoCompleteCycle,
  // controllers
  InvalidCalib,
  InvalidProfile,
  NonPositiveDt,
  NoThresholdFound,
  // plant
  InvalidScenario,
  InvalidCondition,
  InvalidMuscle,
  // analysis
  TooFewSamples,
  TooFewCycles,
  EmptyWindow,
  UnsortedLog,
  MismatchedScenario,
  // cli / io
  MissingCalibration,
  MissingTraces,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

/// Every recoverable failure in the library is reported through this type;
/// `code()` lets callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fesloop
