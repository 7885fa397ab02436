#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "seal2real/image.hpp"

namespace seal2real::stage2 {

struct ForgerConfig {
  int image_size = 64;  // square inputs; must be divisible by 4
  int channels = 16;
};

/// Residual encoder-decoder with skip connections. The output head is
/// zero-initialized, so a fresh forger is the identity map.
class ForgerNetImpl : public torch::nn::Module {
 public:
  explicit ForgerNetImpl(ForgerConfig cfg = {});

  const ForgerConfig& config() const { return cfg_; }

  /// [B,3,S,S] in [0,1] -> clamp(x + head(x), 0, 1). Throws ShapeMismatch.
  torch::Tensor forward(const torch::Tensor& images);

  /// Output convolution; exposed for tests that need a non-trivial head.
  torch::nn::Conv2d& head() { return head_; }

 private:
  ForgerConfig cfg_;
  torch::nn::Conv2d enc0a_{nullptr}, enc0b_{nullptr}, enc1a_{nullptr}, enc1b_{nullptr};
  torch::nn::Conv2d mida_{nullptr}, midb_{nullptr};
  torch::nn::Conv2d up1a_{nullptr}, up1b_{nullptr}, up0a_{nullptr}, up0b_{nullptr}, head_{nullptr};
};
TORCH_MODULE(ForgerNet);

/// Applies the forger to one RGB image.
Image forge(ForgerNet& forger, const Image& synthetic);

inline constexpr int kFeatureLevels = 5;

struct FeatureConfig {
  std::array<int, kFeatureLevels> channels{8, 16, 16, 32, 32};
  std::array<double, kFeatureLevels> alpha{0.2, 0.2, 0.2, 0.2, 0.2};
  std::uint64_t seed = 0x5eed;
  /// Diagnostic mode: level 0 is the raw image and level l its 2^l average
  /// pool; no learned or random weights.
  bool identity = false;
};

/// Frozen multi-scale feature pyramid. Level l has spatial size input / 2^l
/// (identity mode stops halving at one pixel).
/// Random mode uses seeded He-normal convolutions with SiLU, stride 2 from
/// level 1 on.
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  explicit FeatureExtractorImpl(FeatureConfig cfg = {});

  const FeatureConfig& config() const { return cfg_; }
  std::array<torch::Tensor, kFeatureLevels> forward(const torch::Tensor& images);

 private:
  FeatureConfig cfg_;
  std::array<torch::nn::Conv2d, kFeatureLevels> convs_{nullptr, nullptr, nullptr, nullptr, nullptr};
};
TORCH_MODULE(FeatureExtractor);

/// Batch mean of sum_l alpha_l * ||phi_l(a) - phi_l(b)||_2. Random-mode
/// feature differences are divided by sqrt(per-sample element count) so
/// levels are comparable; identity mode uses raw norms. Exactly zero with
/// zero gradient when a == b. Throws ShapeMismatch.
torch::Tensor content_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx);

}  // namespace seal2real::stage2
