#include "evdeform/error.hpp"

namespace evdeform {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::PointBehindCamera: return "PointBehindCamera";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::InsufficientPoints: return "InsufficientPoints";
    case ErrorCode::NoModel: return "NoModel";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::BoundsError: return "BoundsError";
    case ErrorCode::EmptyCluster: return "EmptyCluster";
    case ErrorCode::StreamTooShort: return "StreamTooShort";
    case ErrorCode::InsufficientCorrespondences: return "InsufficientCorrespondences";
    case ErrorCode::SingularConfiguration: return "SingularConfiguration";
    case ErrorCode::DegenerateMotion: return "DegenerateMotion";
    case ErrorCode::NegativeFocalSquared: return "NegativeFocalSquared";
    case ErrorCode::IndefiniteG: return "IndefiniteG";
    case ErrorCode::CheiralityFailure: return "CheiralityFailure";
    case ErrorCode::DivergedBA: return "DivergedBA";
    case ErrorCode::AllRejected: return "AllRejected";
    case ErrorCode::CalibrationFailed: return "CalibrationFailed";
    case ErrorCode::UnknownCamera: return "UnknownCamera";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::EmptySeries: return "EmptySeries";
    case ErrorCode::ZeroObservedDistance: return "ZeroObservedDistance";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace evdeform
