#include "seal2real/benchmark.hpp"

#include "seal2real/dataset.hpp"

namespace seal2real::bench {

namespace fs = std::filesystem;
using synth::Provenance;

namespace {

void shrink_to_desk32(synth::SynthConfig& c) {
  c.doc_width = 32;
  c.doc_height = 32;
  c.outer_radius = {9.0, 12.0};
  c.ring_width = {1.0, 1.5};
  c.glyph_height = {3.5, 4.0};
  c.random_text_length = 4;
  c.document.line_height = 2;
  c.document.line_pitch = 4;
  c.document.margin = 2;
}

}  // namespace

synth::SynthConfig desk32_synth() {
  synth::SynthConfig c;
  shrink_to_desk32(c);
  c.texture_cell = {3.0, 4.0};
  return c;
}

synth::SynthConfig desk32_real() {
  auto c = synth::SynthConfig::real_proxy();
  shrink_to_desk32(c);
  c.texture_cell = {1.5, 2.0};
  return c;
}

stage1::PriorConfig desk32_prior() {
  stage1::PriorConfig p;
  p.autoencoder.factor = 1;
  p.unet.latent_channels = 3;
  p.unet.latent_size = 32;
  p.unet.base_channels = 16;
  p.unet.mid_channels = 32;
  p.unet.prompt_dim = 16;
  p.unet.prompt_len = 4;
  p.unet.attn_dim = 16;
  p.unet.time_dim = 32;
  p.unet.groups = 4;
  p.lr_prompt = 1e-3;
  p.lr_unet = 1e-3;
  return p;
}

DomainGapConfig domain_gap_defaults() {
  DomainGapConfig c;
  c.stage1.max_steps = 1000;
  c.stage1.k_prompt = 25;
  c.stage1.k_unet = 25;
  c.stage1.patience = c.stage1.max_steps;
  c.forger.forger.image_size = 32;
  c.forger.w = 0.02;
  c.forger.lr_forger = 1e-3;
  c.stage2.max_steps = 600;
  c.stage2.s_warm = 0;
  c.stage2.k_forger = 50;
  c.stage2.k_adversarial = 50;
  c.stage2.patience = c.stage2.max_steps;
  c.eval.image_size = 32;
  c.eval.seg_steps = 300;
  return c;
}

DomainGapResult run_domain_gap(const DomainGapConfig& cfg, std::uint64_t seed, const fs::path& work_dir) {
  const int size = cfg.synth.doc_width;
  const auto trad_seed = mix_seed(seed, 1);
  auto trad = dataset::generate_paired(cfg.n_train, cfg.synth, nullptr, work_dir / "traditional", trad_seed);
  auto real = dataset::generate_real_proxy(cfg.n_train, cfg.real, dataset::Purpose::training, work_dir / "real",
                                           mix_seed(seed, 2));
  auto test = dataset::generate_real_proxy(cfg.n_eval, cfg.real, dataset::Purpose::evaluation, work_dir / "eval",
                                           mix_seed(seed, 3));
  auto held = dataset::generate_paired(cfg.n_heldout, cfg.synth, nullptr, work_dir / "heldout", mix_seed(seed, 4));

  auto x_synth = dataset::load_images(trad, trad.select(Provenance::synthetic), size);
  auto x_real = dataset::load_images(real, real.select(Provenance::real), size);
  auto x_held = dataset::load_images(held, held.select(Provenance::synthetic), size);

  diffusion::Autoencoder ae(cfg.prior.autoencoder);
  auto s1 = stage1::make_stage1_state(cfg.prior, ae, mix_seed(seed, 5));
  stage1::run_stage1(cfg.stage1, x_real, x_synth, s1);

  auto s2 = stage2::make_stage2_state(std::move(s1), cfg.forger, mix_seed(seed, 6));
  stage2::run_stage2(cfg.stage2, x_real, x_synth, s2);

  DomainGapResult r;
  const auto probe_seed = mix_seed(seed, 7);
  r.prior_raw = stage2::mean_prior_loss(s2, x_held, probe_seed, cfg.probe_repeats, false);
  r.prior_forged = stage2::mean_prior_loss(s2, x_held, probe_seed, cfg.probe_repeats, true);
  r.forger_l1 = (stage2::forge_batch(s2, x_held) - x_held).abs().mean().item<double>();

  auto realized = dataset::generate_paired(cfg.n_train, cfg.synth, &s2.forger, work_dir / "realized", trad_seed);
  const auto eval_seed = mix_seed(seed, 8);
  r.miou_traditional = eval::eval_segmentation(trad, test, cfg.eval, eval_seed);
  r.miou_realized = eval::eval_segmentation(realized, test, cfg.eval, eval_seed);
  return r;
}

}  // namespace seal2real::bench
