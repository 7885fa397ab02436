#include "seal2real/stage1.hpp"

#include "config_json.hpp"
#include "seal2real/error.hpp"
#include "seal2real/hash.hpp"
#include "seal2real/train_util.hpp"

namespace seal2real::stage1 {

using diffusion::NoiseDraw;

std::string_view to_string(PromptRole role) noexcept { return role == PromptRole::real ? "real" : "forgery"; }

std::string_view to_string(Phase phase) noexcept { return phase == Phase::prompt_phase ? "prompt" : "unet"; }

std::pair<PromptEmbedding, PromptEmbedding> init_prompts(std::string_view real_str, std::string_view forgery_str, int n,
                                                         int d, std::uint64_t seed) {
  require(!real_str.empty() && !forgery_str.empty(), Errc::EmptyString, "prompt strings must be non-empty");
  require(n >= 1 && d >= 1, Errc::BadDims, "prompt matrix needs N >= 1 and d >= 1");
  auto make = [&](PromptRole role, std::string_view text) {
    Rng rng(mix_seed(seed, fnv1a64(text) ^ static_cast<std::uint64_t>(role)));
    PromptEmbedding e;
    e.role = role;
    e.init_string = std::string(text);
    e.matrix = diffusion::randn_like_shape(rng, {n, d}).requires_grad_(true);
    return e;
  };
  return {make(PromptRole::real, real_str), make(PromptRole::forgery, forgery_str)};
}

bool Plateau::update(double loss, double decay, double eps, int patience) {
  if (!started) {
    started = true;
    ema = best = loss;
    since_best = 0;
    return false;
  }
  ema = decay * ema + (1.0 - decay) * loss;
  if (ema < best - eps) {
    best = ema;
    since_best = 0;
  } else {
    ++since_best;
  }
  return since_best >= patience;
}

namespace {

void build_optimizers(Stage1State& s) {
  s.prompt_opt = std::make_shared<torch::optim::Adam>(std::vector<torch::Tensor>{s.real.matrix, s.forgery.matrix},
                                                      torch::optim::AdamOptions(s.config.lr_prompt));
  s.unet_opt = std::make_shared<torch::optim::Adam>(s.model->parameters(), torch::optim::AdamOptions(s.config.lr_unet));
}

torch::Tensor encode_frozen(Stage1State& s, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  return s.ae->encode(images.to(s.real.matrix.scalar_type()));
}

nlohmann::json step_record(const Stage1State& s, std::string_view phase, const PairLoss& loss, const NoiseDraw& dr,
                           const NoiseDraw& ds) {
  return {{"step", s.step},
          {"phase", phase},
          {"loss", loss.total().item<double>()},
          {"loss_real", loss.real.item<double>()},
          {"loss_synth", loss.synth.item<double>()},
          {"t_real", dr.t},
          {"t_synth", ds.t},
          {"rng_draws", s.rng.draws()}};
}

void check_batches(const torch::Tensor& a, const torch::Tensor& b) {
  require(a.defined() && b.defined() && a.size(0) > 0 && b.size(0) > 0, Errc::EmptyBatch, "both batches must be non-empty");
}

}  // namespace

Stage1State make_stage1_state(const PriorConfig& cfg, diffusion::Autoencoder ae, std::uint64_t seed, torch::Dtype dtype) {
  require(!ae.is_empty(), Errc::InvalidConfig, "stage 1 needs an autoencoder");
  require(ae->latent_channels() == cfg.unet.latent_channels, Errc::InvalidConfig,
          "autoencoder latent channels differ from the backbone's");
  Stage1State s;
  s.config = cfg;
  s.ae = ae;
  s.schedule = diffusion::make_schedule(cfg.unet.num_steps, cfg.beta_min, cfg.beta_max);
  torch::manual_seed(mix_seed(seed, 1));
  s.model = diffusion::DiffusionModel(cfg.unet);
  s.model->to(dtype);
  s.ae->to(dtype);
  std::tie(s.real, s.forgery) = init_prompts(cfg.real_prompt, cfg.forgery_prompt, cfg.unet.prompt_len, cfg.unet.prompt_dim, seed);
  for (auto* e : {&s.real, &s.forgery}) e->matrix = e->matrix.detach().to(dtype).requires_grad_(true);
  for (auto& p : s.ae->parameters()) p.requires_grad_(false);
  build_optimizers(s);
  s.rng = Rng(mix_seed(seed, 2));
  return s;
}

PairLoss pair_loss(Stage1State& state, const torch::Tensor& z_real, const NoiseDraw& draw_real,
                   const torch::Tensor& z_synth, const NoiseDraw& draw_synth) {
  return {diffusion::denoising_loss(state.model, z_real, draw_real, state.real.matrix, state.schedule),
          diffusion::denoising_loss(state.model, z_synth, draw_synth, state.forgery.matrix, state.schedule)};
}

nlohmann::json prompt_step(Stage1State& state, const torch::Tensor& batch_real, const torch::Tensor& batch_synth) {
  require(state.valid(), Errc::MissingStage1State, "stage-1 state is not initialized");
  require(state.phase == Phase::prompt_phase, Errc::PhaseViolation, "prompt_step outside prompt_phase");
  check_batches(batch_real, batch_synth);
  auto z_real = encode_frozen(state, batch_real);
  auto z_synth = encode_frozen(state, batch_synth);
  const auto dtype = state.real.matrix.scalar_type();
  auto dr = diffusion::draw_noise(state.rng, z_real.sizes(), state.schedule.steps, dtype);
  auto ds = diffusion::draw_noise(state.rng, z_synth.sizes(), state.schedule.steps, dtype);

  RequiresGradScope frozen(state.model->parameters(), false);
  state.prompt_opt->zero_grad();
  auto loss = pair_loss(state, z_real, dr, z_synth, ds);
  loss.total().backward();
  state.prompt_opt->step();

  auto record = step_record(state, to_string(Phase::prompt_phase), loss, dr, ds);
  ++state.step;
  return record;
}

nlohmann::json unet_step(Stage1State& state, const torch::Tensor& batch_real, const torch::Tensor& batch_synth) {
  require(state.valid(), Errc::MissingStage1State, "stage-1 state is not initialized");
  require(state.phase == Phase::unet_phase, Errc::PhaseViolation, "unet_step outside unet_phase");
  check_batches(batch_real, batch_synth);
  auto z_real = encode_frozen(state, batch_real);
  auto z_synth = encode_frozen(state, batch_synth);
  const auto dtype = state.real.matrix.scalar_type();
  auto dr = diffusion::draw_noise(state.rng, z_real.sizes(), state.schedule.steps, dtype);
  auto ds = diffusion::draw_noise(state.rng, z_synth.sizes(), state.schedule.steps, dtype);

  RequiresGradScope frozen({state.real.matrix, state.forgery.matrix}, false);
  state.unet_opt->zero_grad();
  auto loss = pair_loss(state, z_real, dr, z_synth, ds);
  loss.total().backward();
  state.unet_opt->step();

  auto record = step_record(state, to_string(Phase::unet_phase), loss, dr, ds);
  ++state.step;
  return record;
}

Phase scheduled_phase(const Stage1Config& cfg, int step) {
  const int block = cfg.k_prompt + cfg.k_unet;
  return (step % block) < cfg.k_prompt ? Phase::prompt_phase : Phase::unet_phase;
}

void run_stage1(const Stage1Config& cfg, const torch::Tensor& real, const torch::Tensor& synth, Stage1State& state) {
  require(real.defined() && synth.defined() && real.size(0) > 0 && synth.size(0) > 0, Errc::EmptyDataset,
          "stage 1 needs non-empty real and synthetic sets");
  require(cfg.k_prompt >= 0 && cfg.k_unet >= 0 && cfg.k_prompt + cfg.k_unet > 0, Errc::InvalidConfig,
          "alternation cadence must be non-negative and not both zero");
  require(cfg.batch >= 1 && cfg.max_steps >= 0, Errc::InvalidConfig, "bad batch size or step budget");
  require(state.valid(), Errc::MissingStage1State, "stage-1 state is not initialized");
  state.model->train();

  while (state.step < cfg.max_steps) {
    state.phase = scheduled_phase(cfg, state.step);
    auto batch_real = random_rows(state.rng, real, cfg.batch);
    auto batch_synth = random_rows(state.rng, synth, cfg.batch);
    auto record = state.phase == Phase::prompt_phase ? prompt_step(state, batch_real, batch_synth)
                                                     : unet_step(state, batch_real, batch_synth);
    state.log.append(record);
    const bool stop = state.plateau.update(record.at("loss").get<double>(), cfg.ema_decay, cfg.eps_stop, cfg.patience);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty())
      save_stage1(cfg.checkpoint_dir / ("stage1_step" + std::to_string(state.step) + ".ckpt"), state);
    if (stop) break;
  }
  state.model->eval();
}

torch::Tensor sample_with_prompt(Stage1State& state, PromptRole role, int n, int steps, Rng& rng,
                                 diffusion::Sampler sampler) {
  const auto& prompt = role == PromptRole::real ? state.real.matrix : state.forgery.matrix;
  return diffusion::sample(state.model, state.ae, prompt.detach(), state.schedule, steps, rng, n, sampler);
}

// ---------------------------------------------------------------------------

void write_prior(Checkpoint& ckpt, Stage1State& state) {
  require(state.valid(), Errc::MissingStage1State, "cannot checkpoint an empty stage-1 state");
  ckpt.meta["prior"] = {{"config", state.config},
                        {"step", state.step},
                        {"phase", to_string(state.phase)},
                        {"rng", state.rng.state()},
                        {"plateau", state.plateau},
                        {"dtype", state.real.matrix.scalar_type() == torch::kFloat64 ? "f64" : "f32"},
                        {"real_init", state.real.init_string},
                        {"forgery_init", state.forgery.init_string}};
  ckpt.put_module("unet", *state.model);
  ckpt.put_module("ae", *state.ae);
  ckpt.put("schedule.beta", torch::tensor(state.schedule.beta, torch::kFloat64));
  ckpt.put("schedule.alpha_bar", torch::tensor(state.schedule.alpha_bar, torch::kFloat64));
  ckpt.put("prompt.real", state.real.matrix);
  ckpt.put("prompt.forgery", state.forgery.matrix);
  ckpt.put_adam("adam.prompt", *state.prompt_opt);
  ckpt.put_adam("adam.unet", *state.unet_opt);
}

Stage1State read_prior(const Checkpoint& ckpt) {
  require(ckpt.meta.contains("prior"), Errc::MissingStage1State, "checkpoint carries no stage-1 prior");
  const auto& m = ckpt.meta.at("prior");
  Stage1State s;
  s.config = m.at("config").get<PriorConfig>();
  const bool f64 = m.at("dtype").get<std::string>() == "f64";
  const auto dtype = f64 ? torch::kFloat64 : torch::kFloat32;

  s.ae = diffusion::Autoencoder(s.config.autoencoder);
  s.model = diffusion::DiffusionModel(s.config.unet);
  s.ae->to(dtype);
  s.model->to(dtype);
  ckpt.load_module("ae", *s.ae);
  ckpt.load_module("unet", *s.model);
  for (auto& p : s.ae->parameters()) p.requires_grad_(false);
  s.ae->eval();
  s.model->eval();

  s.schedule = diffusion::make_schedule(s.config.unet.num_steps, s.config.beta_min, s.config.beta_max);
  const auto& stored = ckpt.get("schedule.alpha_bar");
  for (int i = 0; i < s.schedule.steps; ++i)
    require(stored[i].item<double>() == s.schedule.alpha_bar[i], Errc::BadCheckpoint, "stored schedule disagrees with config");

  s.real = {PromptRole::real, ckpt.get("prompt.real").to(dtype).clone().requires_grad_(true), m.at("real_init").get<std::string>()};
  s.forgery = {PromptRole::forgery, ckpt.get("prompt.forgery").to(dtype).clone().requires_grad_(true),
               m.at("forgery_init").get<std::string>()};
  build_optimizers(s);
  ckpt.load_adam("adam.prompt", *s.prompt_opt);
  ckpt.load_adam("adam.unet", *s.unet_opt);
  s.step = m.at("step").get<int>();
  s.phase = m.at("phase").get<std::string>() == "prompt" ? Phase::prompt_phase : Phase::unet_phase;
  s.rng.restore(m.at("rng").get<std::string>());
  s.plateau = m.at("plateau").get<Plateau>();
  return s;
}

void save_stage1(const std::filesystem::path& path, Stage1State& state) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = "stage1";
  write_prior(ckpt, state);
  ckpt.save(path);
}

Stage1State load_stage1(const std::filesystem::path& path) { return read_prior(Checkpoint::load(path)); }

Stage1State clone(Stage1State& state) {
  Checkpoint ckpt;
  write_prior(ckpt, state);
  return read_prior(Checkpoint::deserialize(ckpt.serialize()));
}

}  // namespace seal2real::stage1
