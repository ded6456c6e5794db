#include "ptseg/error.hpp"

namespace ptseg {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateHorizon: return "DegenerateHorizon";
    case ErrorCode::AmbiguousAxis: return "AmbiguousAxis";
    case ErrorCode::InvalidStepCount: return "InvalidStepCount";
    case ErrorCode::SingularHomography: return "SingularHomography";
    case ErrorCode::KeyPointBehindCamera: return "KeyPointBehindCamera";
    case ErrorCode::EmptyBoundingBox: return "EmptyBoundingBox";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyLabelSet: return "EmptyLabelSet";
    case ErrorCode::NoInstances: return "NoInstances";
    case ErrorCode::IncompatibleChain: return "IncompatibleChain";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::RowMismatch: return "RowMismatch";
    case ErrorCode::MissingGeometry: return "MissingGeometry";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Checkpoint: return "Checkpoint";
  }
  return "Unknown";
}

}  // namespace ptseg
