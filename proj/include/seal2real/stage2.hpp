#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <memory>

#include "seal2real/forger.hpp"
#include "seal2real/stage1.hpp"

namespace seal2real::stage2 {

enum class Phase { warmup, forger_phase, adversarial_phase };
std::string_view to_string(Phase phase) noexcept;

struct ForgerSetup {
  ForgerConfig forger;
  FeatureConfig features;
  double w = 1.0;  // content-loss weight
  double lr_forger = 1e-4;
};

struct Stage2State {
  stage1::Stage1State prior;  // backbone, prompts and their optimizers
  ForgerSetup setup;
  ForgerNet forger{nullptr};
  FeatureExtractor features{nullptr};
  std::shared_ptr<torch::optim::Adam> forger_opt;
  int step = 0;
  Phase phase = Phase::warmup;
  Rng rng;
  stage1::Plateau plateau;
  StepLog log;

  bool valid() const { return prior.valid() && !forger.is_empty() && !features.is_empty(); }
};

/// Wraps a trained stage-1 state. The forger starts as the identity map.
/// Throws MissingStage1State.
Stage2State make_stage2_state(stage1::Stage1State prior, const ForgerSetup& setup, std::uint64_t seed);

/// Stand-in for the noise predictor (z_t, t, prompt) -> eps_hat.
using NoisePredictor =
    std::function<torch::Tensor(const torch::Tensor& z_t, const std::vector<int>& t, const torch::Tensor& prompt)>;

/// ||SD(f(I_s), t, T_r) - eps||^2 at an explicit draw, always with the real
/// prompt. Gradient flows to the forger only. Throws MissingStage1State.
torch::Tensor prior_loss(Stage2State& state, const torch::Tensor& synth, const diffusion::NoiseDraw& draw,
                         const NoisePredictor& predictor = {});

/// Same as prior_loss but conditioned on the forgery prompt (probe only).
torch::Tensor prior_loss_with(Stage2State& state, const torch::Tensor& images, const diffusion::NoiseDraw& draw,
                              stage1::PromptRole role);

/// One forger update. Warmup optimizes the content loss alone; forger_phase
/// optimizes prior + w * content. Only the forger changes.
/// Throws PhaseViolation, EmptyBatch.
nlohmann::json forger_step(Stage2State& state, const torch::Tensor& batch_synth);

/// Forgery-vs-real objective: real term with T_r on `batch_real`, forgery
/// term with T_f on `batch_forged`, at explicit draws.
stage1::PairLoss adversarial_loss(Stage2State& state, const torch::Tensor& batch_real,
                                  const diffusion::NoiseDraw& draw_real, const torch::Tensor& batch_forged,
                                  const diffusion::NoiseDraw& draw_forged);

/// One update of backbone and both prompts on real vs forged images; the
/// forged batch is treated as a constant. Throws PhaseViolation, EmptyBatch.
nlohmann::json adversarial_step(Stage2State& state, const torch::Tensor& batch_real, const torch::Tensor& batch_forged);

struct Stage2Config {
  int max_steps = 3000;
  int s_warm = 500;
  int k_forger = 100;
  int k_adversarial = 100;
  int batch = 8;
  double ema_decay = 0.99;
  double eps_stop = 1e-3;
  int patience = 500;
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
};

Phase scheduled_phase(const Stage2Config& cfg, int step);

/// Warmup, then alternating forger / adversarial blocks until max_steps or
/// plateau. Forged batches for adversarial steps are regenerated every step
/// from the current forger. Throws EmptyDataset, MissingStage1State.
void run_stage2(const Stage2Config& cfg, const torch::Tensor& real, const torch::Tensor& synth, Stage2State& state);

/// Mean prior loss over `images` at draws from Rng(seed), `repeats` passes.
/// With apply_forger false the images are scored as given.
double mean_prior_loss(Stage2State& state, const torch::Tensor& images, std::uint64_t seed, int repeats,
                       bool apply_forger, int batch = 32);

/// Runs the forger over [N,3,S,S] without tracking gradients.
torch::Tensor forge_batch(Stage2State& state, const torch::Tensor& images, int batch = 32);

void save_stage2(const std::filesystem::path& path, Stage2State& state);
Stage2State load_stage2(const std::filesystem::path& path);
/// Forger only, from a stage-2 checkpoint.
ForgerNet load_forger(const std::filesystem::path& path);

}  // namespace seal2real::stage2
