#include "thma/error.hpp"

namespace thma {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::HeaderMismatch: return "HeaderMismatch";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::OutOfMercatorBand: return "OutOfMercatorBand";
    case ErrorCode::FrameMismatch: return "FrameMismatch";
    case ErrorCode::DegenerateTrajectory: return "DegenerateTrajectory";
    case ErrorCode::MalformedTileFile: return "MalformedTileFile";
    case ErrorCode::InvalidDescriptor: return "InvalidDescriptor";
    case ErrorCode::DegenerateOrientation: return "DegenerateOrientation";
    case ErrorCode::InvalidAxes: return "InvalidAxes";
    case ErrorCode::DegenerateCone: return "DegenerateCone";
    case ErrorCode::ClassMismatch: return "ClassMismatch";
    case ErrorCode::IndivisibleSequence: return "IndivisibleSequence";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::AlreadyDecided: return "AlreadyDecided";
    case ErrorCode::MalformedDecision: return "MalformedDecision";
    case ErrorCode::DuplicateItem: return "DuplicateItem";
    case ErrorCode::StageFailed: return "StageFailed";
  }
  return "Unknown";
}

}  // namespace thma
