#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seal2real {

enum class Errc {
  // seal_synth
  EmptyTextPool,
  InvalidRange,
  TextTooLongForArc,
  WarpOutOfBounds,
  OutOfBounds,
  // diffusion_core
  InvalidBetaRange,
  IndivisibleDims,
  StepOutOfRange,
  ShapeMismatch,
  PromptDimMismatch,
  InvalidSteps,
  // stage 1 / stage 2
  EmptyString,
  BadDims,
  EmptyBatch,
  PhaseViolation,
  EmptyDataset,
  MissingStage1State,
  // dataset_builder
  IoFailure,
  InvalidConfig,
  EmptyDirectory,
  BadRatios,
  // eval_downstream
  MissingLabels,
  ClassMissing,
  SizeMismatch,
  // checkpoints
  BadCheckpoint,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace seal2real
