#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seal2real/dataset.hpp"

namespace seal2real::eval {

struct EvalConfig {
  int image_size = 64;  // segmentation / identification input size

  int seg_steps = 600;
  int seg_batch = 16;
  int seg_channels = 16;
  double seg_lr = 2e-3;

  int id_steps = 400;
  int id_batch = 16;
  int id_channels = 16;
  double id_lr = 2e-3;
  double id_holdout = 0.2;  // fraction of each class held out for testing

  int rec_steps = 800;
  int rec_batch = 32;
  int rec_channels = 32;
  double rec_lr = 2e-3;
  int rec_strip_height = 16;
  int rec_strip_width = 96;
  double rec_arc_deg = 300.0;     // angular window unwrapped around 12 o'clock
  double rec_inner_ratio = 0.35;  // unwrapped radii [inner, 1] x bbox radius

  /// Replace every model's predictions by the ground truth.
  bool oracle = false;
  /// Permute identification training labels (null control).
  bool shuffle_labels = false;

  bool run_segmentation = true;
  bool run_identification = true;
  bool run_recognition = true;
};

/// Mean over {background, seal} of |P & G| / |P | G|, pooled over the whole
/// set; a class with an empty union scores 1. Inputs are {0,1} tensors of
/// equal shape.
double miou(const torch::Tensor& pred, const torch::Tensor& truth);

/// Entries a dataset contributes to training: forged if present, otherwise
/// synthetic, otherwise labeled real entries. Restricted to the train split
/// when the manifest has one.
std::vector<const dataset::ManifestEntry*> training_entries(const dataset::Manifest& m);

/// Labeled entries used for testing: the test split if present, else all.
std::vector<const dataset::ManifestEntry*> test_entries(const dataset::Manifest& m);

/// Trains a small encoder-decoder segmenter and returns test MIoU.
/// Throws MissingLabels.
double eval_segmentation(const dataset::Manifest& train, const dataset::Manifest& test, const EvalConfig& cfg,
                         std::uint64_t seed);

/// Real-vs-fake CNN classifier. Each class is split into train / held-out
/// parts; returns balanced held-out accuracy. Throws ClassMissing.
double eval_identification(const dataset::Manifest& real, const dataset::Manifest& fake, const EvalConfig& cfg,
                           std::uint64_t seed);

/// Legend recognition: the seal ring is unwrapped into a polar strip around
/// the labeled box, and a CNN predicts every character slot (legends padded
/// to the longest training legend). Returns per-character test accuracy.
/// Throws MissingLabels.
double eval_recognition(const dataset::Manifest& train, const dataset::Manifest& test, const EvalConfig& cfg,
                        std::uint64_t seed);

/// Polar strips [N,3,strip_height,strip_width] for labeled entries.
torch::Tensor polar_strips(const dataset::Manifest& m, const std::vector<const dataset::ManifestEntry*>& entries,
                           const EvalConfig& cfg);

// ---------------------------------------------------------------------------

inline constexpr const char* kTasks[3] = {"segmentation", "identification", "recognition"};
inline constexpr const char* kConditions[2] = {"traditional", "realized"};

/// Published full-scale numbers, kept for side-by-side reporting only.
struct ReferenceNumbers {
  double segmentation[2] = {78.3, 91.5};       // MIoU %
  double identification[2] = {85.63, 90.23};  // accuracy %
  double recognition[2] = {75.34, 81.59};     // accuracy %
  // Mean user-study realism scores per generator, 1-10 scale.
  const char* user_study_sources[5] = {"synthetic", "fake prompt", "real prompt", "forger network", "gan"};
  double user_study_scores[5] = {5.53, 6.69, 7.75, 6.11, 6.06};
};

struct CellResult {
  std::string condition;
  std::string task;
  std::vector<double> per_seed;
  double median = 0.0;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;  // condition-major, task order as kTasks
  ReferenceNumbers reference;
  std::vector<std::string> notes;

  const CellResult* find(std::string_view condition, std::string_view task) const;
  /// One JSON record per cell plus a header record.
  std::string to_jsonl() const;
  /// Two condition rows by three task columns, medians in percent, with the
  /// reference numbers alongside.
  std::string to_table() const;
};

double median(std::vector<double> values);

/// Runs every enabled task for both training datasets at each seed.
/// `evaluation` must hold labeled real-style samples. Throws SizeMismatch
/// when the two training populations differ in size.
EvalReport compare_datasets(const dataset::Manifest& traditional, const dataset::Manifest& realized,
                            const dataset::Manifest& evaluation, const EvalConfig& cfg,
                            const std::vector<std::uint64_t>& seeds);

}  // namespace seal2real::eval
