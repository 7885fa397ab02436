#pragma once

#include <cstdint>
#include <filesystem>

#include "seal2real/eval.hpp"
#include "seal2real/seal_synth.hpp"
#include "seal2real/stage1.hpp"
#include "seal2real/stage2.hpp"

namespace seal2real::bench {

/// 32x32 documents with 4-character legends: the traditional generator.
synth::SynthConfig desk32_synth();
/// Matching real-style generator (held-out ink, texture and scanner law).
synth::SynthConfig desk32_real();

/// Small identity-autoencoder prior sized for desk32 images.
stage1::PriorConfig desk32_prior();

/// End-to-end domain-gap benchmark: traditional synthetics and unlabeled
/// real-style images train both stages; the forger then realizes the same
/// synthetics, and segmenters trained on each version are scored on
/// labeled real-style test data.
struct DomainGapConfig {
  int n_train = 200;
  int n_eval = 200;
  int n_heldout = 100;
  synth::SynthConfig synth = desk32_synth();
  synth::SynthConfig real = desk32_real();
  stage1::PriorConfig prior = desk32_prior();
  stage1::Stage1Config stage1;
  stage2::ForgerSetup forger;
  stage2::Stage2Config stage2;
  eval::EvalConfig eval;
  int probe_repeats = 4;
};

DomainGapConfig domain_gap_defaults();

struct DomainGapResult {
  double prior_raw = 0.0;     // mean prior loss of held-out synthetics
  double prior_forged = 0.0;  // same draws, after the forger
  double forger_l1 = 0.0;     // mean |f(I_s) - I_s| on held-out synthetics
  double miou_traditional = 0.0;
  double miou_realized = 0.0;
};

/// Runs the benchmark under `work_dir` (created if missing).
DomainGapResult run_domain_gap(const DomainGapConfig& cfg, std::uint64_t seed, const std::filesystem::path& work_dir);

}  // namespace seal2real::bench
