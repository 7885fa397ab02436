#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "seal2real/rng.hpp"

namespace seal2real::diffusion {

// ---------------------------------------------------------------------------
// Forward process

/// Variance-preserving forward-process constants, 1-based in t.
struct NoiseSchedule {
  int steps = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> beta;       // beta[t-1]
  std::vector<double> alpha_bar;  // alpha_bar[t-1] = prod_{s<=t} (1 - beta[s-1])

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
};

/// Linear beta schedule; alpha_bar accumulated in double precision.
/// Throws InvalidBetaRange (and InvalidSteps for T < 1).
NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

/// z_t = sqrt(alpha_bar) * z0 + sqrt(1 - alpha_bar) * eps, one step per batch row.
torch::Tensor q_sample(const torch::Tensor& z0, const std::vector<int>& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched);
torch::Tensor q_sample(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& sched);

/// Closed form at an explicit alpha_bar in [0, 1]; used for boundary checks.
torch::Tensor q_sample_at(const torch::Tensor& z0, const torch::Tensor& eps, double alpha_bar);

/// Standard-normal tensor drawn from `rng` (row-major fill order).
torch::Tensor randn_like_shape(Rng& rng, at::IntArrayRef shape, torch::Dtype dtype = torch::kFloat32);

/// Per-step draws shared by every loss that needs (t, eps).
struct NoiseDraw {
  std::vector<int> t;
  torch::Tensor eps;
};

/// t ~ U{1..T} for each row, then eps ~ N(0, I) of `shape`.
NoiseDraw draw_noise(Rng& rng, at::IntArrayRef shape, int num_steps, torch::Dtype dtype = torch::kFloat32);

// ---------------------------------------------------------------------------
// Autoencoder

struct AutoencoderConfig {
  int factor = 4;           // 1, 2 or 4; 1 = exact identity
  int latent_channels = 4;  // forced to 3 when factor == 1
  int width = 32;
};

/// Image <-> latent map. Latents are shifted and scaled to unit scale with
/// constants fitted after training (`calibrate`).
class AutoencoderImpl : public torch::nn::Module {
 public:
  explicit AutoencoderImpl(AutoencoderConfig cfg = {});

  const AutoencoderConfig& config() const { return cfg_; }
  int latent_channels() const { return cfg_.factor == 1 ? 3 : cfg_.latent_channels; }
  bool is_identity() const { return cfg_.factor == 1; }

  /// [B,3,H,W] in [0,1] -> [B,c,H/f,W/f]. Throws IndivisibleDims.
  torch::Tensor encode(const torch::Tensor& images);
  /// Inverse map; output in [0,1].
  torch::Tensor decode(const torch::Tensor& latents);

  /// Fits the latent shift/scale so encoded `images` have zero mean, unit std.
  void calibrate(const torch::Tensor& images);

 private:
  torch::Tensor encode_raw(const torch::Tensor& images);

  AutoencoderConfig cfg_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
  torch::Tensor shift_;
  torch::Tensor scale_;
};
TORCH_MODULE(Autoencoder);

struct AutoencoderTrainConfig {
  int steps = 1500;
  int batch = 16;
  double lr = 2e-3;
};

/// Trains on [N,3,H,W] images with an L1 reconstruction loss, then
/// calibrates. Returns the last-step training loss. No-op for factor 1.
double train_autoencoder(Autoencoder& ae, const torch::Tensor& images, const AutoencoderTrainConfig& cfg, Rng& rng);

/// Mean absolute reconstruction error over [N,3,H,W] images.
double reconstruction_l1(Autoencoder& ae, const torch::Tensor& images);

// ---------------------------------------------------------------------------
// Conditional noise predictor

struct UNetConfig {
  int latent_channels = 4;
  int latent_size = 16;
  int base_channels = 32;
  int mid_channels = 64;
  int prompt_dim = 64;  // d
  int prompt_len = 8;   // N
  int attn_dim = 32;
  int groups = 8;
  int time_dim = 64;
  int num_steps = 200;  // T
};

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in_ch, int out_ch, int time_dim, int groups);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear time_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Single-head cross-attention from feature maps to an N x d prompt matrix,
/// added residually.
class CrossAttentionImpl : public torch::nn::Module {
 public:
  CrossAttentionImpl(int channels, int prompt_dim, int attn_dim, int groups);
  /// x: [B,C,H,W]; prompt: [B,N,d].
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& prompt);
  void zero_output();

 private:
  int attn_dim_;
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Linear to_q_{nullptr}, to_k_{nullptr}, to_v_{nullptr}, to_out_{nullptr};
};
TORCH_MODULE(CrossAttention);

/// U-shaped epsilon predictor with cross-attention at two resolutions.
class DiffusionModelImpl : public torch::nn::Module {
 public:
  explicit DiffusionModelImpl(UNetConfig cfg = {});

  const UNetConfig& config() const { return cfg_; }

  /// z_t: [B,c,h,w]; t: one step per row; prompt: [N,d] or [B,N,d].
  torch::Tensor forward(const torch::Tensor& z_t, const std::vector<int>& t, const torch::Tensor& prompt);

  /// Zeroes every cross-attention output projection so the prompt has no
  /// influence (and receives no gradient).
  void zero_conditioning();

 private:
  torch::Tensor time_embedding(const std::vector<int>& t, const torch::Tensor& like);

  UNetConfig cfg_;
  torch::nn::Linear time1_{nullptr}, time2_{nullptr};
  torch::nn::Conv2d conv_in_{nullptr}, down_{nullptr}, up_conv_{nullptr}, conv_out_{nullptr};
  ResBlock res_down1_{nullptr}, res_down2_{nullptr}, res_mid_{nullptr}, res_up2_{nullptr}, res_up1_{nullptr};
  CrossAttention attn_down1_{nullptr}, attn_down2_{nullptr}, attn_up1_{nullptr};
  torch::nn::GroupNorm norm_out_{nullptr};
};
TORCH_MODULE(DiffusionModel);

/// Validating wrapper around DiffusionModel::forward.
/// Throws StepOutOfRange, PromptDimMismatch, ShapeMismatch.
torch::Tensor predict_noise(DiffusionModel& model, const torch::Tensor& z_t, const std::vector<int>& t,
                            const torch::Tensor& prompt);
torch::Tensor predict_noise(DiffusionModel& model, const torch::Tensor& z_t, int t, const torch::Tensor& prompt);

/// Mean squared error between predict_noise(q_sample(z0, draw)) and draw.eps:
/// the simple diffusion loss shared by both training stages.
torch::Tensor denoising_loss(DiffusionModel& model, const torch::Tensor& z0, const NoiseDraw& draw,
                             const torch::Tensor& prompt, const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// Reverse process

enum class Sampler { ddpm, ddim };

/// Ancestral reverse process from pure noise over `steps` evenly strided
/// timesteps (all T when steps == T), then decode. Returns [n,3,H,W] in [0,1].
/// Throws InvalidSteps.
torch::Tensor sample(DiffusionModel& model, Autoencoder& ae, const torch::Tensor& prompt, const NoiseSchedule& sched,
                     int steps, Rng& rng, int n = 1, Sampler sampler = Sampler::ddpm);

/// FNV-1a over the raw bytes of every parameter and buffer, in registration
/// order. Equal checksums <=> bit-identical state (up to hash collisions).
std::uint64_t checksum(const torch::nn::Module& module);
std::uint64_t checksum(const torch::Tensor& tensor);

}  // namespace seal2real::diffusion
