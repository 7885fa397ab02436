#include "seal2real/stage2.hpp"

#include "config_json.hpp"
#include "seal2real/error.hpp"
#include "seal2real/train_util.hpp"

namespace seal2real::stage2 {

using diffusion::NoiseDraw;

std::string_view to_string(Phase phase) noexcept {
  switch (phase) {
    case Phase::warmup: return "warmup";
    case Phase::forger_phase: return "forger";
    case Phase::adversarial_phase: return "adversarial";
  }
  return "?";
}

namespace {

Phase phase_from_string(const std::string& s) {
  if (s == "warmup") return Phase::warmup;
  if (s == "forger") return Phase::forger_phase;
  if (s == "adversarial") return Phase::adversarial_phase;
  fail(Errc::BadCheckpoint, "unknown stage-2 phase '" + s + "'");
}

torch::Dtype prior_dtype(const Stage2State& s) { return s.prior.real.matrix.scalar_type(); }

void build_forger_opt(Stage2State& s) {
  s.forger_opt = std::make_shared<torch::optim::Adam>(s.forger->parameters(),
                                                      torch::optim::AdamOptions(s.setup.lr_forger));
}

std::vector<torch::Tensor> prior_tensors(Stage2State& s) {
  auto out = s.prior.model->parameters();
  out.push_back(s.prior.real.matrix);
  out.push_back(s.prior.forgery.matrix);
  return out;
}

torch::Tensor encode(Stage2State& s, const torch::Tensor& images) { return s.prior.ae->encode(images); }

torch::Tensor scored_loss(Stage2State& s, const torch::Tensor& z0, const NoiseDraw& draw, const torch::Tensor& prompt,
                          const NoisePredictor& predictor) {
  if (!predictor) return diffusion::denoising_loss(s.prior.model, z0, draw, prompt, s.prior.schedule);
  auto z_t = diffusion::q_sample(z0, draw.t, draw.eps, s.prior.schedule);
  return (predictor(z_t, draw.t, prompt) - draw.eps).pow(2).mean();
}

void require_state(const Stage2State& s) {
  require(s.valid(), Errc::MissingStage1State, "stage-2 state lacks stage-1 outputs");
}

}  // namespace

Stage2State make_stage2_state(stage1::Stage1State prior, const ForgerSetup& setup, std::uint64_t seed) {
  require(prior.valid(), Errc::MissingStage1State, "stage 2 needs a trained stage-1 state");
  require(setup.w >= 0.0, Errc::InvalidConfig, "content weight must be non-negative");
  Stage2State s;
  s.prior = std::move(prior);
  s.setup = setup;
  const auto dtype = prior_dtype(s);
  torch::manual_seed(mix_seed(seed, 21));
  s.forger = ForgerNet(setup.forger);
  s.forger->to(dtype);
  s.features = FeatureExtractor(setup.features);
  s.features->to(dtype);
  build_forger_opt(s);
  s.rng = Rng(mix_seed(seed, 22));
  return s;
}

torch::Tensor prior_loss(Stage2State& state, const torch::Tensor& synth, const NoiseDraw& draw,
                         const NoisePredictor& predictor) {
  require_state(state);
  auto z = encode(state, state.forger->forward(synth));
  return scored_loss(state, z, draw, state.prior.real.matrix, predictor);
}

torch::Tensor prior_loss_with(Stage2State& state, const torch::Tensor& images, const NoiseDraw& draw,
                              stage1::PromptRole role) {
  require_state(state);
  const auto& prompt = role == stage1::PromptRole::real ? state.prior.real.matrix : state.prior.forgery.matrix;
  return scored_loss(state, encode(state, images), draw, prompt, {});
}

nlohmann::json forger_step(Stage2State& state, const torch::Tensor& batch_synth) {
  require_state(state);
  require(state.phase == Phase::warmup || state.phase == Phase::forger_phase, Errc::PhaseViolation,
          "forger_step outside warmup / forger phase");
  require(batch_synth.defined() && batch_synth.size(0) > 0, Errc::EmptyBatch, "empty synthetic batch");
  auto x = batch_synth.to(prior_dtype(state));

  RequiresGradScope frozen(prior_tensors(state), false);
  state.forger_opt->zero_grad();
  nlohmann::json record = {{"step", state.step}, {"phase", to_string(state.phase)}, {"w", state.setup.w}};
  torch::Tensor total;
  if (state.phase == Phase::warmup) {
    auto content = content_loss(state.forger->forward(x), x, state.features);
    total = content;
    record["loss_content"] = content.item<double>();
  } else {
    auto forged = state.forger->forward(x);
    auto z = encode(state, forged);
    auto draw = diffusion::draw_noise(state.rng, z.sizes(), state.prior.schedule.steps, prior_dtype(state));
    auto prior = scored_loss(state, z, draw, state.prior.real.matrix, {});
    auto content = content_loss(forged, x, state.features);
    total = prior + state.setup.w * content;
    record["loss_prior"] = prior.item<double>();
    record["loss_content"] = content.item<double>();
    record["t"] = draw.t;
    record["prompt"] = stage1::to_string(state.prior.real.role);
  }
  total.backward();
  state.forger_opt->step();
  record["loss"] = total.item<double>();
  record["rng_draws"] = state.rng.draws();
  ++state.step;
  return record;
}

stage1::PairLoss adversarial_loss(Stage2State& state, const torch::Tensor& batch_real, const NoiseDraw& draw_real,
                                  const torch::Tensor& batch_forged, const NoiseDraw& draw_forged) {
  require_state(state);
  auto& p = state.prior;
  return {diffusion::denoising_loss(p.model, encode(state, batch_real), draw_real, p.real.matrix, p.schedule),
          diffusion::denoising_loss(p.model, encode(state, batch_forged), draw_forged, p.forgery.matrix, p.schedule)};
}

nlohmann::json adversarial_step(Stage2State& state, const torch::Tensor& batch_real, const torch::Tensor& batch_forged) {
  require_state(state);
  require(state.phase == Phase::adversarial_phase, Errc::PhaseViolation, "adversarial_step outside adversarial phase");
  require(batch_real.defined() && batch_forged.defined() && batch_real.size(0) > 0 && batch_forged.size(0) > 0,
          Errc::EmptyBatch, "both batches must be non-empty");
  const auto dtype = prior_dtype(state);
  torch::Tensor z_real, z_forged;
  {
    torch::NoGradGuard guard;
    z_real = encode(state, batch_real.to(dtype));
    z_forged = encode(state, batch_forged.detach().to(dtype));
  }
  auto dr = diffusion::draw_noise(state.rng, z_real.sizes(), state.prior.schedule.steps, dtype);
  auto df = diffusion::draw_noise(state.rng, z_forged.sizes(), state.prior.schedule.steps, dtype);

  RequiresGradScope frozen(state.forger->parameters(), false);
  auto& p = state.prior;
  p.prompt_opt->zero_grad();
  p.unet_opt->zero_grad();
  stage1::PairLoss loss{diffusion::denoising_loss(p.model, z_real, dr, p.real.matrix, p.schedule),
                        diffusion::denoising_loss(p.model, z_forged, df, p.forgery.matrix, p.schedule)};
  loss.total().backward();
  p.prompt_opt->step();
  p.unet_opt->step();

  nlohmann::json record = {{"step", state.step},
                           {"phase", to_string(Phase::adversarial_phase)},
                           {"loss", loss.total().item<double>()},
                           {"loss_real", loss.real.item<double>()},
                           {"loss_forged", loss.synth.item<double>()},
                           {"t_real", dr.t},
                           {"t_forged", df.t},
                           {"rng_draws", state.rng.draws()}};
  ++state.step;
  return record;
}

Phase scheduled_phase(const Stage2Config& cfg, int step) {
  if (step < cfg.s_warm) return Phase::warmup;
  const int block = cfg.k_forger + cfg.k_adversarial;
  return ((step - cfg.s_warm) % block) < cfg.k_forger ? Phase::forger_phase : Phase::adversarial_phase;
}

torch::Tensor forge_batch(Stage2State& state, const torch::Tensor& images, int batch) {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += batch)
    parts.push_back(state.forger->forward(images.slice(0, i, std::min<int64_t>(i + batch, images.size(0))).to(prior_dtype(state))));
  return torch::cat(parts);
}

void run_stage2(const Stage2Config& cfg, const torch::Tensor& real, const torch::Tensor& synth, Stage2State& state) {
  require(real.defined() && synth.defined() && real.size(0) > 0 && synth.size(0) > 0, Errc::EmptyDataset,
          "stage 2 needs non-empty real and synthetic sets");
  require(cfg.s_warm >= 0 && cfg.k_forger >= 0 && cfg.k_adversarial >= 0 && cfg.k_forger + cfg.k_adversarial > 0,
          Errc::InvalidConfig, "bad stage-2 cadence");
  require(cfg.batch >= 1 && cfg.max_steps >= 0, Errc::InvalidConfig, "bad batch size or step budget");
  require_state(state);
  state.prior.model->train();
  state.forger->train();

  while (state.step < cfg.max_steps) {
    state.phase = scheduled_phase(cfg, state.step);
    nlohmann::json record;
    if (state.phase == Phase::adversarial_phase) {
      auto batch_real = random_rows(state.rng, real, cfg.batch);
      auto batch_synth = random_rows(state.rng, synth, cfg.batch);
      record = adversarial_step(state, batch_real, forge_batch(state, batch_synth, cfg.batch));
    } else {
      record = forger_step(state, random_rows(state.rng, synth, cfg.batch));
    }
    state.log.append(record);
    bool stop = false;
    if (state.phase != Phase::warmup)
      stop = state.plateau.update(record.at("loss").get<double>(), cfg.ema_decay, cfg.eps_stop, cfg.patience);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty())
      save_stage2(cfg.checkpoint_dir / ("stage2_step" + std::to_string(state.step) + ".ckpt"), state);
    if (stop) break;
  }
  state.prior.model->eval();
  state.forger->eval();
}

double mean_prior_loss(Stage2State& state, const torch::Tensor& images, std::uint64_t seed, int repeats,
                       bool apply_forger, int batch) {
  require_state(state);
  require(images.defined() && images.size(0) > 0, Errc::EmptyDataset, "no images to score");
  torch::NoGradGuard guard;
  Rng rng(seed);
  const auto dtype = prior_dtype(state);
  double sum = 0.0;
  int64_t count = 0;
  for (int r = 0; r < repeats; ++r) {
    for (int64_t i = 0; i < images.size(0); i += batch) {
      auto x = images.slice(0, i, std::min<int64_t>(i + batch, images.size(0))).to(dtype);
      if (apply_forger) x = state.forger->forward(x);
      auto z = encode(state, x);
      auto draw = diffusion::draw_noise(rng, z.sizes(), state.prior.schedule.steps, dtype);
      sum += diffusion::denoising_loss(state.prior.model, z, draw, state.prior.real.matrix, state.prior.schedule)
                 .item<double>() *
             static_cast<double>(x.size(0));
      count += x.size(0);
    }
  }
  return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------

namespace {

void write_forger(Checkpoint& ckpt, Stage2State& state) {
  ckpt.meta["forger"] = {{"setup", state.setup},
                         {"step", state.step},
                         {"phase", to_string(state.phase)},
                         {"rng", state.rng.state()},
                         {"plateau", state.plateau}};
  ckpt.put_module("forger", *state.forger);
  ckpt.put_module("features", *state.features);
  ckpt.put_adam("adam.forger", *state.forger_opt);
}

ForgerNet read_forger_net(const Checkpoint& ckpt, const ForgerSetup& setup) {
  ForgerNet f(setup.forger);
  f->to(ckpt.get("forger.head.weight").scalar_type());
  ckpt.load_module("forger", *f);
  f->eval();
  return f;
}

}  // namespace

void save_stage2(const std::filesystem::path& path, Stage2State& state) {
  require_state(state);
  Checkpoint ckpt;
  ckpt.meta["kind"] = "stage2";
  stage1::write_prior(ckpt, state.prior);
  write_forger(ckpt, state);
  ckpt.save(path);
}

Stage2State load_stage2(const std::filesystem::path& path) {
  auto ckpt = Checkpoint::load(path);
  require(ckpt.meta.contains("forger"), Errc::BadCheckpoint, "not a stage-2 checkpoint");
  const auto& m = ckpt.meta.at("forger");
  Stage2State s;
  s.prior = stage1::read_prior(ckpt);
  s.setup = m.at("setup").get<ForgerSetup>();
  s.forger = read_forger_net(ckpt, s.setup);
  s.features = FeatureExtractor(s.setup.features);
  s.features->to(prior_dtype(s));
  ckpt.load_module("features", *s.features);
  build_forger_opt(s);
  ckpt.load_adam("adam.forger", *s.forger_opt);
  s.step = m.at("step").get<int>();
  s.phase = phase_from_string(m.at("phase").get<std::string>());
  s.rng.restore(m.at("rng").get<std::string>());
  s.plateau = m.at("plateau").get<stage1::Plateau>();
  return s;
}

ForgerNet load_forger(const std::filesystem::path& path) {
  auto ckpt = Checkpoint::load(path);
  require(ckpt.meta.contains("forger"), Errc::BadCheckpoint, "checkpoint carries no forger");
  return read_forger_net(ckpt, ckpt.meta.at("forger").at("setup").get<ForgerSetup>());
}

}  // namespace seal2real::stage2
