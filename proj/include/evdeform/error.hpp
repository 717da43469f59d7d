#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace evdeform {

enum class ErrorCode {
  // geometry
  PointBehindCamera,
  NoConvergence,
  DegenerateBaseline,
  InsufficientPoints,
  NoModel,
  // event_stream
  ParseError,
  BoundsError,
  // marker_extraction
  EmptyCluster,
  StreamTooShort,
  // self_calibration
  InsufficientCorrespondences,
  SingularConfiguration,
  DegenerateMotion,
  NegativeFocalSquared,
  IndefiniteG,
  CheiralityFailure,
  DivergedBA,
  AllRejected,
  CalibrationFailed,
  // deformation
  UnknownCamera,
  RankDeficient,
  EmptySeries,
  ZeroObservedDistance,
  // simulator / io
  ConfigError,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace evdeform
