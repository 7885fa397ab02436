#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include "seal2real/checkpoint.hpp"
#include "seal2real/diffusion.hpp"
#include "seal2real/rng.hpp"
#include "seal2real/step_log.hpp"

namespace seal2real::stage1 {

inline constexpr std::string_view kRealPrompt = "A photo of document with real seal";
inline constexpr std::string_view kForgeryPrompt = "A photo of document with fake seal";

enum class PromptRole { real, forgery };
std::string_view to_string(PromptRole role) noexcept;

/// Learnable N x d conditioning matrix for one image population.
struct PromptEmbedding {
  PromptRole role = PromptRole::real;
  torch::Tensor matrix;  // [N, d], requires_grad
  std::string init_string;
};

/// String-seeded Gaussian init. Throws EmptyString, BadDims.
std::pair<PromptEmbedding, PromptEmbedding> init_prompts(std::string_view real_str, std::string_view forgery_str, int n,
                                                         int d, std::uint64_t seed);

enum class Phase { prompt_phase, unet_phase };
std::string_view to_string(Phase phase) noexcept;

/// Diffusion backbone and schedule hyper-parameters shared by both stages.
struct PriorConfig {
  diffusion::UNetConfig unet;
  diffusion::AutoencoderConfig autoencoder;
  double beta_min = 5e-4;
  double beta_max = 0.1;
  std::string real_prompt{kRealPrompt};
  std::string forgery_prompt{kForgeryPrompt};
  double lr_prompt = 1e-4;
  double lr_unet = 1e-4;
};

/// EMA-plateau stopping rule.
struct Plateau {
  double ema = 0.0;
  double best = 0.0;
  int since_best = 0;
  bool started = false;

  /// Feeds one loss value; true once no improvement > eps happened within `patience` updates.
  bool update(double loss, double decay, double eps, int patience);
};

struct Stage1State {
  PriorConfig config;
  diffusion::DiffusionModel model{nullptr};
  diffusion::Autoencoder ae{nullptr};
  diffusion::NoiseSchedule schedule;
  PromptEmbedding real;
  PromptEmbedding forgery;
  std::shared_ptr<torch::optim::Adam> prompt_opt;
  std::shared_ptr<torch::optim::Adam> unet_opt;
  int step = 0;
  Phase phase = Phase::prompt_phase;
  Rng rng;
  Plateau plateau;
  StepLog log;

  bool valid() const { return !model.is_empty() && !ae.is_empty() && real.matrix.defined() && forgery.matrix.defined(); }
};

/// Fresh stage-1 state. `ae` must already be trained (or identity); the
/// backbone and prompts are initialized from `seed`. `dtype` selects the
/// precision of the backbone, autoencoder and prompts.
Stage1State make_stage1_state(const PriorConfig& cfg, diffusion::Autoencoder ae, std::uint64_t seed,
                              torch::Dtype dtype = torch::kFloat32);

/// Both terms of the prompt/UNet objective at explicit draws.
struct PairLoss {
  torch::Tensor real;   // |SD(I_r, t_r, T_r) - eps_r|^2
  torch::Tensor synth;  // |SD(I_s, t_f, T_f) - eps_f|^2
  torch::Tensor total() const { return real + synth; }
};

PairLoss pair_loss(Stage1State& state, const torch::Tensor& z_real, const diffusion::NoiseDraw& draw_real,
                   const torch::Tensor& z_synth, const diffusion::NoiseDraw& draw_synth);

/// One Adam step on (T_r, T_f) with the backbone frozen. Requires
/// phase == prompt_phase. Returns the step-log record.
nlohmann::json prompt_step(Stage1State& state, const torch::Tensor& batch_real, const torch::Tensor& batch_synth);

/// One Adam step on the backbone with both prompts frozen. Requires
/// phase == unet_phase.
nlohmann::json unet_step(Stage1State& state, const torch::Tensor& batch_real, const torch::Tensor& batch_synth);

struct Stage1Config {
  int max_steps = 4000;
  int k_prompt = 50;
  int k_unet = 50;
  int batch = 8;  // per population, per step
  double ema_decay = 0.99;
  double eps_stop = 1e-3;
  int patience = 500;
  int checkpoint_every = 0;  // 0 disables
  std::filesystem::path checkpoint_dir;
};

/// Phase that step index `step` (0-based) runs in under the k_p/k_u cadence.
Phase scheduled_phase(const Stage1Config& cfg, int step);

/// Alternating prompt/UNet training until max_steps or plateau. `real` and
/// `synth` are [N,3,H,W] image sets. Throws EmptyDataset.
void run_stage1(const Stage1Config& cfg, const torch::Tensor& real, const torch::Tensor& synth, Stage1State& state);

/// Generates with the real or forgery prompt.
torch::Tensor sample_with_prompt(Stage1State& state, PromptRole role, int n, int steps, Rng& rng,
                                 diffusion::Sampler sampler = diffusion::Sampler::ddpm);

// Checkpoint I/O. Stage-1 content is written under fixed names so stage 2
// can extend the same container.
void write_prior(Checkpoint& ckpt, Stage1State& state);
Stage1State read_prior(const Checkpoint& ckpt);
void save_stage1(const std::filesystem::path& path, Stage1State& state);
Stage1State load_stage1(const std::filesystem::path& path);
/// Deep copy through the checkpoint codec.
Stage1State clone(Stage1State& state);

}  // namespace seal2real::stage1
