#include "seal2real/diffusion.hpp"

#include <cmath>

#include "seal2real/error.hpp"
#include "seal2real/hash.hpp"

namespace seal2real::diffusion {

namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int in, int out, int k, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2));
}

void check_step(int t, int num_steps) {
  require(t >= 1 && t <= num_steps, Errc::StepOutOfRange,
          "timestep " + std::to_string(t) + " outside [1, " + std::to_string(num_steps) + "]");
}

torch::Tensor per_row(const std::vector<double>& values, const torch::Tensor& like) {
  auto col = torch::tensor(values, torch::kFloat64).to(like.scalar_type());
  std::vector<int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = static_cast<int64_t>(values.size());
  return col.view(shape);
}

}  // namespace

// ---------------------------------------------------------------------------

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
  require(steps >= 1, Errc::InvalidSteps, "schedule needs T >= 1");
  require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0, Errc::InvalidBetaRange,
          "need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.steps = steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.beta.resize(steps);
  s.alpha_bar.resize(steps);
  double running = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.beta[i] = beta_min + (beta_max - beta_min) * frac;
    running *= 1.0 - s.beta[i];
    s.alpha_bar[i] = running;
  }
  return s;
}

torch::Tensor q_sample(const torch::Tensor& z0, const std::vector<int>& t, const torch::Tensor& eps,
                       const NoiseSchedule& sched) {
  require(z0.sizes() == eps.sizes(), Errc::ShapeMismatch, "eps shape differs from z0");
  require(static_cast<int64_t>(t.size()) == z0.size(0), Errc::ShapeMismatch, "one timestep per batch row expected");
  std::vector<double> signal, noise;
  for (int step : t) {
    check_step(step, sched.steps);
    const double ab = sched.alpha_bar_at(step);
    signal.push_back(std::sqrt(ab));
    noise.push_back(std::sqrt(1.0 - ab));
  }
  return per_row(signal, z0) * z0 + per_row(noise, z0) * eps;
}

torch::Tensor q_sample(const torch::Tensor& z0, int t, const torch::Tensor& eps, const NoiseSchedule& sched) {
  return q_sample(z0, std::vector<int>(static_cast<std::size_t>(z0.size(0)), t), eps, sched);
}

torch::Tensor q_sample_at(const torch::Tensor& z0, const torch::Tensor& eps, double alpha_bar) {
  require(z0.sizes() == eps.sizes(), Errc::ShapeMismatch, "eps shape differs from z0");
  require(alpha_bar >= 0.0 && alpha_bar <= 1.0, Errc::InvalidRange, "alpha_bar outside [0, 1]");
  return std::sqrt(alpha_bar) * z0 + std::sqrt(1.0 - alpha_bar) * eps;
}

torch::Tensor randn_like_shape(Rng& rng, at::IntArrayRef shape, torch::Dtype dtype) {
  auto out = torch::empty(shape, torch::kFloat64);
  auto* p = out.data_ptr<double>();
  for (int64_t i = 0, n = out.numel(); i < n; ++i) p[i] = rng.normal();
  return out.to(dtype);
}

NoiseDraw draw_noise(Rng& rng, at::IntArrayRef shape, int num_steps, torch::Dtype dtype) {
  NoiseDraw d;
  d.t.reserve(static_cast<std::size_t>(shape[0]));
  for (int64_t i = 0; i < shape[0]; ++i) d.t.push_back(static_cast<int>(rng.uniform_int(1, num_steps)));
  d.eps = randn_like_shape(rng, shape, dtype);
  return d;
}

// ---------------------------------------------------------------------------

AutoencoderImpl::AutoencoderImpl(AutoencoderConfig cfg) : cfg_(cfg) {
  require(cfg_.factor == 1 || cfg_.factor == 2 || cfg_.factor == 4, Errc::InvalidConfig, "autoencoder factor must be 1, 2 or 4");
  const int c = latent_channels();
  shift_ = register_buffer("shift", torch::zeros({1, c, 1, 1}));
  scale_ = register_buffer("scale", torch::ones({1}));
  if (is_identity()) return;

  const int w = cfg_.width;
  nn::Sequential enc;
  enc->push_back(conv(3, w, 3));
  enc->push_back(nn::SiLU());
  for (int f = cfg_.factor; f > 1; f /= 2) {
    enc->push_back(conv(w, w, 3, 2));
    enc->push_back(nn::SiLU());
    enc->push_back(conv(w, w, 3));
    enc->push_back(nn::SiLU());
  }
  enc->push_back(conv(w, c, 1));
  encoder_ = register_module("encoder", enc);

  nn::Sequential dec;
  dec->push_back(conv(c, w, 3));
  dec->push_back(nn::SiLU());
  for (int f = cfg_.factor; f > 1; f /= 2) {
    dec->push_back(nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    dec->push_back(conv(w, w, 3));
    dec->push_back(nn::SiLU());
    dec->push_back(conv(w, w, 3));
    dec->push_back(nn::SiLU());
  }
  dec->push_back(conv(w, 3, 3));
  dec->push_back(nn::Sigmoid());
  decoder_ = register_module("decoder", dec);
}

torch::Tensor AutoencoderImpl::encode_raw(const torch::Tensor& images) {
  require(images.dim() == 4 && images.size(1) == 3, Errc::ShapeMismatch, "encode expects [B,3,H,W]");
  require(images.size(2) % cfg_.factor == 0 && images.size(3) % cfg_.factor == 0, Errc::IndivisibleDims,
          "image dims not divisible by factor " + std::to_string(cfg_.factor));
  if (is_identity()) return images;
  return encoder_->forward(images);
}

torch::Tensor AutoencoderImpl::encode(const torch::Tensor& images) {
  auto raw = encode_raw(images);
  if (is_identity()) return raw;
  return (raw - shift_) * scale_;
}

torch::Tensor AutoencoderImpl::decode(const torch::Tensor& latents) {
  require(latents.dim() == 4 && latents.size(1) == latent_channels(), Errc::ShapeMismatch, "decode: bad latent shape");
  if (is_identity()) return latents;
  return decoder_->forward(latents / scale_ + shift_);
}

void AutoencoderImpl::calibrate(const torch::Tensor& images) {
  if (is_identity()) return;
  torch::NoGradGuard guard;
  auto raw = encode_raw(images);
  auto mean = raw.mean({0, 2, 3}, /*keepdim=*/true);
  auto std = (raw - mean).pow(2).mean().sqrt();
  shift_.copy_(mean);
  scale_.copy_(1.0 / std.clamp_min(1e-6));
}

double train_autoencoder(Autoencoder& ae, const torch::Tensor& images, const AutoencoderTrainConfig& cfg, Rng& rng) {
  if (ae->is_identity()) return 0.0;
  require(images.size(0) > 0, Errc::EmptyDataset, "autoencoder needs training images");
  ae->train();
  torch::optim::Adam opt(ae->parameters(), torch::optim::AdamOptions(cfg.lr));
  const int64_t n = images.size(0);
  double last = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int64_t> idx;
    for (int b = 0; b < cfg.batch; ++b) idx.push_back(rng.uniform_int(0, n - 1));
    auto batch = images.index_select(0, torch::tensor(idx, torch::kInt64));
    opt.zero_grad();
    auto z = ae->encode(batch);
    auto recon = ae->decode(z);
    auto loss = (recon - batch).abs().mean() + 1e-4 * z.pow(2).mean();
    loss.backward();
    opt.step();
    last = loss.item<double>();
  }
  ae->calibrate(images);
  ae->eval();
  return last;
}

double reconstruction_l1(Autoencoder& ae, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  return (ae->decode(ae->encode(images)) - images).abs().mean().item<double>();
}

// ---------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(int in_ch, int out_ch, int time_dim, int groups) {
  norm1_ = register_module("norm1", nn::GroupNorm(nn::GroupNormOptions(groups, in_ch)));
  conv1_ = register_module("conv1", conv(in_ch, out_ch, 3));
  time_proj_ = register_module("time_proj", nn::Linear(time_dim, out_ch));
  norm2_ = register_module("norm2", nn::GroupNorm(nn::GroupNormOptions(groups, out_ch)));
  conv2_ = register_module("conv2", conv(out_ch, out_ch, 3));
  if (in_ch != out_ch) skip_ = register_module("skip", conv(in_ch, out_ch, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_->forward(torch::silu(norm1_->forward(x)));
  h = h + time_proj_->forward(temb).unsqueeze(-1).unsqueeze(-1);
  h = conv2_->forward(torch::silu(norm2_->forward(h)));
  return h + (skip_ ? skip_->forward(x) : x);
}

CrossAttentionImpl::CrossAttentionImpl(int channels, int prompt_dim, int attn_dim, int groups) : attn_dim_(attn_dim) {
  norm_ = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(groups, channels)));
  to_q_ = register_module("to_q", nn::Linear(nn::LinearOptions(channels, attn_dim).bias(false)));
  to_k_ = register_module("to_k", nn::Linear(nn::LinearOptions(prompt_dim, attn_dim).bias(false)));
  to_v_ = register_module("to_v", nn::Linear(nn::LinearOptions(prompt_dim, attn_dim).bias(false)));
  to_out_ = register_module("to_out", nn::Linear(attn_dim, channels));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& prompt) {
  const auto B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  auto h = norm_->forward(x).flatten(2).transpose(1, 2);  // [B,HW,C]
  auto q = to_q_->forward(h);
  auto k = to_k_->forward(prompt);  // [B,N,a]
  auto v = to_v_->forward(prompt);
  auto weights = torch::softmax(torch::bmm(q, k.transpose(1, 2)) / std::sqrt(static_cast<double>(attn_dim_)), -1);
  auto out = to_out_->forward(torch::bmm(weights, v));  // [B,HW,C]
  return x + out.transpose(1, 2).reshape({B, C, H, W});
}

void CrossAttentionImpl::zero_output() {
  torch::NoGradGuard guard;
  to_out_->weight.zero_();
  to_out_->bias.zero_();
}

DiffusionModelImpl::DiffusionModelImpl(UNetConfig cfg) : cfg_(cfg) {
  require(cfg_.base_channels % 2 == 0, Errc::InvalidConfig, "base_channels must be even");
  require(cfg_.latent_size % 2 == 0, Errc::InvalidConfig, "latent_size must be even");
  const int b = cfg_.base_channels, m = cfg_.mid_channels, g = cfg_.groups, td = cfg_.time_dim;
  time1_ = register_module("time1", nn::Linear(b, td));
  time2_ = register_module("time2", nn::Linear(td, td));
  conv_in_ = register_module("conv_in", conv(cfg_.latent_channels, b, 3));
  res_down1_ = register_module("res_down1", ResBlock(b, b, td, g));
  attn_down1_ = register_module("attn_down1", CrossAttention(b, cfg_.prompt_dim, cfg_.attn_dim, g));
  down_ = register_module("down", conv(b, b, 3, 2));
  res_down2_ = register_module("res_down2", ResBlock(b, m, td, g));
  attn_down2_ = register_module("attn_down2", CrossAttention(m, cfg_.prompt_dim, cfg_.attn_dim, g));
  res_mid_ = register_module("res_mid", ResBlock(m, m, td, g));
  res_up2_ = register_module("res_up2", ResBlock(2 * m, m, td, g));
  up_conv_ = register_module("up_conv", conv(m, b, 3));
  res_up1_ = register_module("res_up1", ResBlock(2 * b, b, td, g));
  attn_up1_ = register_module("attn_up1", CrossAttention(b, cfg_.prompt_dim, cfg_.attn_dim, g));
  norm_out_ = register_module("norm_out", nn::GroupNorm(nn::GroupNormOptions(g, b)));
  conv_out_ = register_module("conv_out", conv(b, cfg_.latent_channels, 3));
}

torch::Tensor DiffusionModelImpl::time_embedding(const std::vector<int>& t, const torch::Tensor& like) {
  const int half = cfg_.base_channels / 2;
  std::vector<double> values;
  values.reserve(t.size() * 2 * half);
  for (int step : t) {
    for (int i = 0; i < half; ++i) values.push_back(std::sin(step * std::exp(-std::log(10000.0) * i / half)));
    for (int i = 0; i < half; ++i) values.push_back(std::cos(step * std::exp(-std::log(10000.0) * i / half)));
  }
  auto emb = torch::tensor(values, torch::kFloat64)
                 .view({static_cast<int64_t>(t.size()), 2 * half})
                 .to(like.scalar_type());
  return time2_->forward(torch::silu(time1_->forward(emb)));
}

torch::Tensor DiffusionModelImpl::forward(const torch::Tensor& z_t, const std::vector<int>& t, const torch::Tensor& prompt) {
  auto cond = prompt.dim() == 2 ? prompt.unsqueeze(0).expand({z_t.size(0), prompt.size(0), prompt.size(1)}) : prompt;
  auto temb = time_embedding(t, z_t);

  auto h = conv_in_->forward(z_t);
  auto skip1 = attn_down1_->forward(res_down1_->forward(h, temb), cond);
  h = down_->forward(skip1);
  auto skip2 = attn_down2_->forward(res_down2_->forward(h, temb), cond);
  h = res_mid_->forward(skip2, temb);
  h = res_up2_->forward(torch::cat({h, skip2}, 1), temb);
  h = up_conv_->forward(torch::upsample_nearest2d(h, std::vector<int64_t>{skip1.size(2), skip1.size(3)}));
  h = res_up1_->forward(torch::cat({h, skip1}, 1), temb);
  h = attn_up1_->forward(h, cond);
  return conv_out_->forward(torch::silu(norm_out_->forward(h)));
}

void DiffusionModelImpl::zero_conditioning() {
  attn_down1_->zero_output();
  attn_down2_->zero_output();
  attn_up1_->zero_output();
}

torch::Tensor predict_noise(DiffusionModel& model, const torch::Tensor& z_t, const std::vector<int>& t,
                            const torch::Tensor& prompt) {
  const auto& cfg = model->config();
  require(z_t.dim() == 4 && z_t.size(1) == cfg.latent_channels && z_t.size(2) % 2 == 0 && z_t.size(3) % 2 == 0,
          Errc::ShapeMismatch, "latent shape incompatible with model");
  require(static_cast<int64_t>(t.size()) == z_t.size(0), Errc::ShapeMismatch, "one timestep per batch row expected");
  for (int step : t) check_step(step, cfg.num_steps);
  const bool shared = prompt.dim() == 2;
  require(shared || (prompt.dim() == 3 && prompt.size(0) == z_t.size(0)), Errc::PromptDimMismatch,
          "prompt must be [N,d] or [B,N,d]");
  require(prompt.size(-1) == cfg.prompt_dim && prompt.size(-2) == cfg.prompt_len, Errc::PromptDimMismatch,
          "prompt is " + std::to_string(prompt.size(-2)) + "x" + std::to_string(prompt.size(-1)) + ", model expects " +
              std::to_string(cfg.prompt_len) + "x" + std::to_string(cfg.prompt_dim));
  return model->forward(z_t, t, prompt);
}

torch::Tensor predict_noise(DiffusionModel& model, const torch::Tensor& z_t, int t, const torch::Tensor& prompt) {
  return predict_noise(model, z_t, std::vector<int>(static_cast<std::size_t>(z_t.size(0)), t), prompt);
}

torch::Tensor denoising_loss(DiffusionModel& model, const torch::Tensor& z0, const NoiseDraw& draw,
                             const torch::Tensor& prompt, const NoiseSchedule& sched) {
  auto z_t = q_sample(z0, draw.t, draw.eps, sched);
  return (predict_noise(model, z_t, draw.t, prompt) - draw.eps).pow(2).mean();
}

// ---------------------------------------------------------------------------

torch::Tensor sample(DiffusionModel& model, Autoencoder& ae, const torch::Tensor& prompt, const NoiseSchedule& sched,
                     int steps, Rng& rng, int n, Sampler sampler) {
  require(steps >= 1, Errc::InvalidSteps, "sampler needs at least one step");
  require(steps <= sched.steps, Errc::InvalidSteps, "more sampler steps than schedule steps");
  require(n >= 1, Errc::InvalidConfig, "sample count must be positive");
  torch::NoGradGuard guard;
  const auto& cfg = model->config();
  const auto dtype = prompt.scalar_type();

  std::vector<int> taus;
  for (int i = 1; i <= steps; ++i)
    taus.push_back(static_cast<int>((static_cast<int64_t>(i) * sched.steps + steps - 1) / steps));

  const bool clip = ae->is_identity();
  auto z = randn_like_shape(rng, std::vector<int64_t>{n, cfg.latent_channels, cfg.latent_size, cfg.latent_size}, dtype);
  for (int i = steps; i >= 1; --i) {
    const int t = taus[i - 1];
    const double ab_t = sched.alpha_bar_at(t);
    const double ab_prev = i > 1 ? sched.alpha_bar_at(taus[i - 2]) : 1.0;
    const double beta = 1.0 - ab_t / ab_prev;

    auto eps = predict_noise(model, z, t, prompt);
    auto x0 = (z - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t);
    if (clip) x0 = x0.clamp(0.0, 1.0);

    if (sampler == Sampler::ddim) {
      auto eps_dir = clip ? (z - std::sqrt(ab_t) * x0) / std::sqrt(1.0 - ab_t) : eps;
      z = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_dir;
      continue;
    }
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t);
    z = c0 * x0 + ct * z;
    if (i > 1) {
      const double var = beta * (1.0 - ab_prev) / (1.0 - ab_t);
      z = z + std::sqrt(var) * randn_like_shape(rng, z.sizes(), dtype);
    }
  }
  return ae->decode(z).clamp(0.0, 1.0);
}

std::uint64_t checksum(const torch::Tensor& tensor) {
  auto t = tensor.detach().contiguous();
  const auto* bytes = static_cast<const char*>(t.data_ptr());
  return fnv1a64(std::string_view(bytes, static_cast<std::size_t>(t.numel() * t.element_size())));
}

std::uint64_t checksum(const torch::nn::Module& module) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::string& name, const torch::Tensor& t) {
    h = mix_seed(h, fnv1a64(name));
    h = mix_seed(h, checksum(t));
  };
  for (const auto& p : module.named_parameters()) mix(p.key(), p.value());
  for (const auto& b : module.named_buffers()) mix(b.key(), b.value());
  return h;
}

}  // namespace seal2real::diffusion
