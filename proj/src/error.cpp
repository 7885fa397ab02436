#include "seal2real/error.hpp"

namespace seal2real {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyTextPool: return "EmptyTextPool";
    case Errc::InvalidRange: return "InvalidRange";
    case Errc::TextTooLongForArc: return "TextTooLongForArc";
    case Errc::WarpOutOfBounds: return "WarpOutOfBounds";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::InvalidBetaRange: return "InvalidBetaRange";
    case Errc::IndivisibleDims: return "IndivisibleDims";
    case Errc::StepOutOfRange: return "StepOutOfRange";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::PromptDimMismatch: return "PromptDimMismatch";
    case Errc::InvalidSteps: return "InvalidSteps";
    case Errc::EmptyString: return "EmptyString";
    case Errc::BadDims: return "BadDims";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::PhaseViolation: return "PhaseViolation";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::MissingStage1State: return "MissingStage1State";
    case Errc::IoFailure: return "IoFailure";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyDirectory: return "EmptyDirectory";
    case Errc::BadRatios: return "BadRatios";
    case Errc::MissingLabels: return "MissingLabels";
    case Errc::ClassMissing: return "ClassMissing";
    case Errc::SizeMismatch: return "SizeMismatch";
    case Errc::BadCheckpoint: return "BadCheckpoint";
  }
  return "Unknown";
}

}  // namespace seal2real
