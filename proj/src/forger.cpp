#include "seal2real/forger.hpp"

#include <cmath>

#include "seal2real/diffusion.hpp"
#include "seal2real/error.hpp"
#include "seal2real/rng.hpp"
#include "seal2real/tensor_image.hpp"

namespace seal2real::stage2 {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

namespace {

nn::Conv2d conv(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor up2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kNearest));
}

}  // namespace

ForgerNetImpl::ForgerNetImpl(ForgerConfig cfg) : cfg_(cfg) {
  const int c = cfg.channels;
  enc0a_ = register_module("enc0a", conv(3, c));
  enc0b_ = register_module("enc0b", conv(c, c));
  enc1a_ = register_module("enc1a", conv(c, 2 * c, 2));
  enc1b_ = register_module("enc1b", conv(2 * c, 2 * c));
  mida_ = register_module("mida", conv(2 * c, 4 * c, 2));
  midb_ = register_module("midb", conv(4 * c, 4 * c));
  up1a_ = register_module("up1a", conv(4 * c, 2 * c));
  up1b_ = register_module("up1b", conv(4 * c, 2 * c));
  up0a_ = register_module("up0a", conv(2 * c, c));
  up0b_ = register_module("up0b", conv(2 * c, c));
  head_ = register_module("head", conv(c, 3));
  torch::NoGradGuard guard;
  head_->weight.zero_();
  head_->bias.zero_();
}

torch::Tensor ForgerNetImpl::forward(const torch::Tensor& x) {
  require(x.dim() == 4 && x.size(1) == 3 && x.size(2) == cfg_.image_size && x.size(3) == cfg_.image_size,
          Errc::ShapeMismatch, "forger expects [B,3,S,S] with S = image_size");
  auto e0 = F::silu(enc0b_(F::silu(enc0a_(x))));
  auto e1 = F::silu(enc1b_(F::silu(enc1a_(e0))));
  auto m = F::silu(midb_(F::silu(mida_(e1))));
  auto u1 = F::silu(up1a_(up2(m)));
  u1 = F::silu(up1b_(torch::cat({u1, e1}, 1)));
  auto u0 = F::silu(up0a_(up2(u1)));
  u0 = F::silu(up0b_(torch::cat({u0, e0}, 1)));
  return (x + head_(u0)).clamp(0.0, 1.0);
}

Image forge(ForgerNet& forger, const Image& synthetic) {
  require(synthetic.channels == 3, Errc::ShapeMismatch, "forger expects an RGB image");
  torch::NoGradGuard guard;
  const auto dtype = forger->parameters().front().scalar_type();
  auto out = forger->forward(to_tensor(synthetic).unsqueeze(0).to(dtype));
  return to_image(out[0]);
}

FeatureExtractorImpl::FeatureExtractorImpl(FeatureConfig cfg) : cfg_(cfg) {
  double alpha_sum = 0.0;
  for (double a : cfg.alpha) {
    require(a >= 0.0 && std::isfinite(a), Errc::InvalidConfig, "feature weights must be non-negative");
    alpha_sum += a;
  }
  require(alpha_sum > 0.0, Errc::InvalidConfig, "feature weights must not all be zero");
  if (cfg.identity) return;

  Rng rng(cfg.seed);
  int in = 3;
  for (int l = 0; l < kFeatureLevels; ++l) {
    const int out = cfg.channels[static_cast<std::size_t>(l)];
    require(out >= 1, Errc::InvalidConfig, "feature channels must be positive");
    auto c = conv(in, out, l == 0 ? 1 : 2);
    torch::NoGradGuard guard;
    const double std = std::sqrt(2.0 / (in * 9.0));
    c->weight.copy_(diffusion::randn_like_shape(rng, c->weight.sizes()) * std);
    c->bias.zero_();
    convs_[static_cast<std::size_t>(l)] = register_module("level" + std::to_string(l), c);
    in = out;
  }
  for (auto& p : parameters()) p.requires_grad_(false);
}

std::array<torch::Tensor, kFeatureLevels> FeatureExtractorImpl::forward(const torch::Tensor& images) {
  std::array<torch::Tensor, kFeatureLevels> out;
  auto h = images;
  for (int l = 0; l < kFeatureLevels; ++l) {
    if (cfg_.identity) {
      // stop halving once a side reaches one pixel
      if (l > 0 && h.size(2) >= 2 && h.size(3) >= 2) h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    } else {
      h = F::silu(convs_[static_cast<std::size_t>(l)](h));
    }
    out[static_cast<std::size_t>(l)] = h;
  }
  return out;
}

torch::Tensor content_loss(const torch::Tensor& a, const torch::Tensor& b, FeatureExtractor& fx) {
  require(a.sizes() == b.sizes() && a.dim() == 4, Errc::ShapeMismatch, "content loss needs equal [B,C,H,W] shapes");
  const auto fa = fx->forward(a);
  const auto fb = fx->forward(b);
  torch::Tensor total = torch::zeros({a.size(0)}, a.options());
  for (int l = 0; l < kFeatureLevels; ++l) {
    const double alpha = fx->config().alpha[static_cast<std::size_t>(l)];
    if (alpha == 0.0) continue;
    auto diff = (fa[static_cast<std::size_t>(l)] - fb[static_cast<std::size_t>(l)]).flatten(1);
    auto sq = diff.pow(2).sum(1);
    // sqrt(0) has an infinite derivative; route zeros through a dummy value.
    auto positive = sq > 0;
    auto norm = torch::where(positive, torch::sqrt(torch::where(positive, sq, torch::ones_like(sq))), torch::zeros_like(sq));
    if (!fx->config().identity) norm = norm / std::sqrt(static_cast<double>(diff.size(1)));
    total = total + alpha * norm;
  }
  return total.mean();
}

}  // namespace seal2real::stage2
