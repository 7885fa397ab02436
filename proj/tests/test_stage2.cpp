#include <gtest/gtest.h>

#include "seal2real/error.hpp"
#include "seal2real/stage2.hpp"
#include "seal2real/tensor_image.hpp"
#include "support/testing.hpp"

using namespace seal2real;
using namespace seal2real::stage2;
using diffusion::checksum;

namespace {

Errc error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::BadCheckpoint;
}

torch::Tensor images(std::uint64_t seed, int n, torch::Dtype dtype = torch::kFloat64) {
  Rng rng(seed);
  return s2r_test::uniform_images(rng, n, 8, 0.1, 0.9, dtype);
}

std::uint64_t prior_checksum(Stage2State& s) {
  return s2r_test::checksum_all({torch::tensor(static_cast<int64_t>(checksum(*s.prior.model))), s.prior.real.matrix,
                                 s.prior.forgery.matrix});
}

FeatureExtractor identity_features(std::array<double, kFeatureLevels> alpha) {
  FeatureConfig c;
  c.identity = true;
  c.alpha = alpha;
  return FeatureExtractor(c);
}

}  // namespace

TEST(Forge, FreshForgerIsIdentity) {
  torch::manual_seed(0);
  ForgerNet f(ForgerConfig{16, 8});
  Image img(16, 16, 3);
  Rng rng(1);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  EXPECT_EQ(forge(f, img), img);
  auto x = images(2, 3, torch::kFloat32);
  ForgerNet g(ForgerConfig{8, 4});
  EXPECT_TRUE(torch::equal(g->forward(x), x));
}

TEST(Forge, OutputClampedToUnitRange) {
  torch::manual_seed(1);
  ForgerNet f(ForgerConfig{8, 4});
  {
    torch::NoGradGuard guard;
    f->head()->weight.normal_(0.0, 3.0);
    f->head()->bias.fill_(0.5);
  }
  auto y = f->forward(torch::rand({4, 3, 8, 8}));
  EXPECT_GE(y.min().item<double>(), 0.0);
  EXPECT_LE(y.max().item<double>(), 1.0);
  EXPECT_EQ(error_code([&] { f->forward(torch::rand({1, 3, 12, 12})); }), Errc::ShapeMismatch);
}

TEST(FeatureExtractor, LevelShapesAndFrozen) {
  FeatureExtractor fx(FeatureConfig{});
  auto feats = fx->forward(torch::rand({2, 3, 32, 32}));
  for (int l = 0; l < kFeatureLevels; ++l) {
    EXPECT_EQ(feats[static_cast<std::size_t>(l)].size(2), 32 >> l);
    EXPECT_EQ(feats[static_cast<std::size_t>(l)].size(3), 32 >> l);
  }
  for (const auto& p : fx->parameters()) EXPECT_FALSE(p.requires_grad());
  FeatureExtractor again(FeatureConfig{});
  EXPECT_EQ(checksum(*fx), checksum(*again));
}

TEST(FeatureExtractor, RejectsBadWeights) {
  FeatureConfig zero;
  zero.alpha = {0, 0, 0, 0, 0};
  EXPECT_EQ(error_code([&] { FeatureExtractor f(zero); }), Errc::InvalidConfig);
  FeatureConfig negative;
  negative.alpha = {1, -0.5, 0, 0, 0};
  EXPECT_EQ(error_code([&] { FeatureExtractor f(negative); }), Errc::InvalidConfig);
}

TEST(ContentLoss, ZeroOnEqualWithZeroGradient) {
  FeatureExtractor fx(FeatureConfig{});
  fx->to(torch::kFloat64);
  auto a = images(3, 2).requires_grad_(true);
  auto loss = content_loss(a, a.detach(), fx);
  EXPECT_EQ(loss.item<double>(), 0.0);
  loss.backward();
  EXPECT_EQ(a.grad().abs().max().item<double>(), 0.0);
}

TEST(ContentLoss, SymmetricAndNonnegative) {
  FeatureExtractor fx(FeatureConfig{});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto a = images(seed, 2, torch::kFloat32);
    auto b = images(seed + 100, 2, torch::kFloat32);
    const double ab = content_loss(a, b, fx).item<double>();
    const double ba = content_loss(b, a, fx).item<double>();
    EXPECT_EQ(ab, ba);
    EXPECT_GT(ab, 0.0);
  }
}

TEST(ContentLoss, IdentityModeIsImageL2) {
  auto fx = identity_features({1, 0, 0, 0, 0});
  auto a = images(4, 3);
  auto b = images(5, 3);
  const double got = content_loss(a, b, fx).item<double>();
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    double sq = 0.0;
    auto d = (a[i] - b[i]).reshape(-1);
    for (int64_t k = 0; k < d.numel(); ++k) sq += d[k].item<double>() * d[k].item<double>();
    expect += std::sqrt(sq);
  }
  expect /= 3.0;
  EXPECT_LT(std::abs(got - expect) / expect, 1e-6);
}

TEST(ContentLoss, ShapeMismatchRejected) {
  FeatureExtractor fx(FeatureConfig{});
  EXPECT_EQ(error_code([&] { content_loss(torch::rand({1, 3, 8, 8}), torch::rand({2, 3, 8, 8}), fx); }),
            Errc::ShapeMismatch);
}

TEST(ContentLoss, GradientMatchesFiniteDifferences) {
  FeatureConfig c;
  c.channels = {2, 3, 3, 4, 4};
  FeatureExtractor fx(c);
  fx->to(torch::kFloat64);
  auto a = images(6, 2).requires_grad_(true);
  auto b = images(7, 2);
  Rng rng(6);
  EXPECT_LT(s2r_test::grad_check([&] { return content_loss(a, b, fx); }, a, 60, rng).rel_error, 1e-4);
  auto fi = identity_features({0.4, 0.3, 0.1, 0.1, 0.1});
  EXPECT_LT(s2r_test::grad_check([&] { return content_loss(a, b, fi); }, a, 60, rng).rel_error, 1e-4);
}

TEST(PriorLoss, PerfectPredictorGivesZero) {
  auto s = s2r_test::tiny_stage2(1);
  auto x = images(1, 2);
  Rng rng(1);
  auto draw = diffusion::draw_noise(rng, x.sizes(), 10, torch::kFloat64);
  NoisePredictor oracle = [&](const torch::Tensor&, const std::vector<int>&, const torch::Tensor&) { return draw.eps; };
  EXPECT_EQ(prior_loss(s, x, draw, oracle).item<double>(), 0.0);
}

TEST(PriorLoss, PromptSwapChangesValue) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto prior = s2r_test::tiny_stage1(seed, torch::kFloat32);
    stage1::Stage1Config cfg;
    cfg.max_steps = 4;
    cfg.k_prompt = 1;
    cfg.k_unet = 1;
    cfg.batch = 2;
    stage1::run_stage1(cfg, images(seed, 4, torch::kFloat32), images(seed + 50, 4, torch::kFloat32), prior);
    auto s = make_stage2_state(std::move(prior), ForgerSetup{{8, 4}, {}, 1.0, 1e-3}, seed);
    auto x = images(seed + 7, 2, torch::kFloat32);
    Rng rng(seed);
    auto draw = diffusion::draw_noise(rng, x.sizes(), 10);
    torch::NoGradGuard guard;
    const double r = prior_loss_with(s, x, draw, stage1::PromptRole::real).item<double>();
    const double f = prior_loss_with(s, x, draw, stage1::PromptRole::forgery).item<double>();
    EXPECT_GT(std::abs(r - f), 0.0) << seed;
  }
}

TEST(PriorLoss, GradientMatchesFiniteDifferences) {
  auto s = s2r_test::tiny_stage2(2);
  auto x = images(2, 2);
  Rng rng(2);
  auto draw = diffusion::draw_noise(rng, x.sizes(), 10, torch::kFloat64);
  auto loss = [&] { return prior_loss(s, x, draw); };
  // deep forger weights see gradients near 1e-7; smaller steps are roundoff-bound
  EXPECT_LT(s2r_test::grad_check_all(loss, s.forger->parameters(), 6, rng, 1e-3).rel_error, 1e-4);
}

TEST(PriorLoss, MissingStateRejected) {
  Stage2State empty;
  auto x = images(3, 1);
  Rng rng(3);
  auto draw = diffusion::draw_noise(rng, x.sizes(), 10, torch::kFloat64);
  EXPECT_EQ(error_code([&] { prior_loss(empty, x, draw); }), Errc::MissingStage1State);
  EXPECT_EQ(error_code([] {
              stage1::Stage1State none;
              make_stage2_state(std::move(none), ForgerSetup{}, 0);
            }),
            Errc::MissingStage1State);
}

TEST(ForgerStep, TouchesOnlyForger) {
  auto s = s2r_test::tiny_stage2(4);
  auto x = images(4, 2);
  for (auto phase : {Phase::warmup, Phase::forger_phase}) {
    s.phase = phase;
    const auto prior = prior_checksum(s);
    const auto feats = checksum(*s.features);
    const auto phi = checksum(*s.forger);
    forger_step(s, x);
    EXPECT_EQ(prior_checksum(s), prior);
    EXPECT_EQ(checksum(*s.features), feats);
    EXPECT_NE(checksum(*s.forger), phi);
  }
}

TEST(ForgerStep, ZeroWeightLogsPriorOnly) {
  auto s = s2r_test::tiny_stage2(5);
  s.setup.w = 0.0;
  s.phase = Phase::forger_phase;
  const auto rec = forger_step(s, images(5, 2));
  EXPECT_EQ(rec["loss"].get<double>(), rec["loss_prior"].get<double>());
  EXPECT_EQ(rec["prompt"], "real");
}

TEST(ForgerStep, TotalDecomposesAtSharedDraws) {
  auto s = s2r_test::tiny_stage2(6);
  s.setup.w = 0.7;
  s.phase = Phase::forger_phase;
  auto x = images(6, 2);
  Rng rng = s.rng;
  double prior, content;
  {
    torch::NoGradGuard guard;
    auto forged = s.forger->forward(x);
    auto draw = diffusion::draw_noise(rng, forged.sizes(), s.prior.schedule.steps, torch::kFloat64);
    auto z_t = diffusion::q_sample(forged, draw.t, draw.eps, s.prior.schedule);
    prior = (diffusion::predict_noise(s.prior.model, z_t, draw.t, s.prior.real.matrix) - draw.eps).pow(2).mean().item<double>();
    content = content_loss(forged, x, s.features).item<double>();
  }
  const auto rec = forger_step(s, x);
  EXPECT_LT(std::abs(rec["loss_prior"].get<double>() - prior) / prior, 1e-6);
  EXPECT_LT(std::abs(rec["loss_content"].get<double>() - content) / content, 1e-6);
  const double total = prior + 0.7 * content;
  EXPECT_LT(std::abs(rec["loss"].get<double>() - total) / total, 1e-6);
}

TEST(ForgerStep, WarmupUsesContentOnly) {
  auto s = s2r_test::tiny_stage2(7);
  const auto draws = s.rng.draws();
  const auto rec = forger_step(s, images(7, 2));
  EXPECT_EQ(rec["phase"], "warmup");
  EXPECT_FALSE(rec.contains("loss_prior"));
  EXPECT_EQ(rec["loss"].get<double>(), rec["loss_content"].get<double>());
  EXPECT_EQ(s.rng.draws(), draws);
}

TEST(ForgerStep, PhaseAndBatchChecks) {
  auto s = s2r_test::tiny_stage2(8);
  EXPECT_EQ(error_code([&] { forger_step(s, images(8, 2).narrow(0, 0, 0)); }), Errc::EmptyBatch);
  s.phase = Phase::adversarial_phase;
  EXPECT_EQ(error_code([&] { forger_step(s, images(8, 2)); }), Errc::PhaseViolation);
  s.phase = Phase::forger_phase;
  EXPECT_EQ(error_code([&] { adversarial_step(s, images(8, 2), images(9, 2)); }), Errc::PhaseViolation);
}

TEST(AdversarialStep, TouchesOnlyPrior) {
  auto s = s2r_test::tiny_stage2(9);
  s.phase = Phase::adversarial_phase;
  const auto phi = checksum(*s.forger);
  const auto feats = checksum(*s.features);
  const auto theta = checksum(*s.prior.model);
  const auto tr = checksum(s.prior.real.matrix);
  const auto tf = checksum(s.prior.forgery.matrix);
  auto real = images(9, 2);
  auto forged = forge_batch(s, images(10, 2));
  adversarial_step(s, real, forged);
  EXPECT_EQ(checksum(*s.forger), phi);
  EXPECT_EQ(checksum(*s.features), feats);
  EXPECT_NE(checksum(*s.prior.model), theta);
  EXPECT_NE(checksum(s.prior.real.matrix), tr);
  EXPECT_NE(checksum(s.prior.forgery.matrix), tf);
}

TEST(AdversarialStep, GradientsMatchFiniteDifferences) {
  auto s = s2r_test::tiny_stage2(10);
  auto real = images(10, 2);
  auto forged = forge_batch(s, images(11, 2));
  Rng rng(10);
  auto dr = diffusion::draw_noise(rng, real.sizes(), 10, torch::kFloat64);
  auto df = diffusion::draw_noise(rng, forged.sizes(), 10, torch::kFloat64);
  auto loss = [&] { return adversarial_loss(s, real, dr, forged, df).total(); };
  EXPECT_LT(s2r_test::grad_check(loss, s.prior.real.matrix, 16, rng).rel_error, 1e-4);
  EXPECT_LT(s2r_test::grad_check(loss, s.prior.forgery.matrix, 16, rng).rel_error, 1e-4);
  EXPECT_LT(s2r_test::grad_check_all(loss, s.prior.model->parameters(), 4, rng).rel_error, 1e-4);
}

TEST(AdversarialStep, SymmetricWhenInputsCoincide) {
  auto s = s2r_test::tiny_stage2(11);
  {
    torch::NoGradGuard guard;
    s.prior.forgery.matrix.copy_(s.prior.real.matrix);
  }
  auto x = images(11, 3);
  Rng rng(11);
  auto d = diffusion::draw_noise(rng, x.sizes(), 10, torch::kFloat64);
  auto l = adversarial_loss(s, x, d, x, d);
  EXPECT_EQ(l.real.item<double>(), l.synth.item<double>());
}

TEST(RunStage2, PhaseSchedule) {
  auto s = s2r_test::tiny_stage2(12, torch::kFloat32);
  Stage2Config cfg;
  cfg.max_steps = 15;
  cfg.s_warm = 5;
  cfg.k_forger = 3;
  cfg.k_adversarial = 2;
  cfg.batch = 2;
  run_stage2(cfg, images(12, 4, torch::kFloat32), images(13, 4, torch::kFloat32), s);
  std::vector<std::string> expect;
  for (int i = 0; i < 5; ++i) expect.push_back("warmup");
  for (int r = 0; r < 2; ++r) {
    for (int i = 0; i < 3; ++i) expect.push_back("forger");
    for (int i = 0; i < 2; ++i) expect.push_back("adversarial");
  }
  EXPECT_EQ(s.log.phases(), expect);
  EXPECT_EQ(s.step, 15);
}

TEST(RunStage2, DeterministicForSeed) {
  Stage2Config cfg;
  cfg.max_steps = 8;
  cfg.s_warm = 2;
  cfg.k_forger = 2;
  cfg.k_adversarial = 2;
  cfg.batch = 2;
  auto real = images(14, 4, torch::kFloat32);
  auto synth = images(15, 4, torch::kFloat32);
  auto a = s2r_test::tiny_stage2(14, torch::kFloat32);
  auto b = s2r_test::tiny_stage2(14, torch::kFloat32);
  run_stage2(cfg, real, synth, a);
  run_stage2(cfg, real, synth, b);
  EXPECT_EQ(a.log.records(), b.log.records());
  EXPECT_EQ(checksum(*a.forger), checksum(*b.forger));
}

TEST(RunStage2, EmptyDatasetRejected) {
  auto s = s2r_test::tiny_stage2(16, torch::kFloat32);
  EXPECT_EQ(error_code([&] { run_stage2({}, images(1, 2, torch::kFloat32).narrow(0, 0, 0), images(2, 2, torch::kFloat32), s); }),
            Errc::EmptyDataset);
}

TEST(Stage2Checkpoint, RoundTripIsBitExact) {
  s2r_test::TempDir dir("ck2");
  auto s = s2r_test::tiny_stage2(17);
  forger_step(s, images(17, 2));
  save_stage2(dir / "a.ckpt", s);
  auto back = load_stage2(dir / "a.ckpt");
  save_stage2(dir / "b.ckpt", back);
  EXPECT_EQ(read_file(dir / "a.ckpt"), read_file(dir / "b.ckpt"));
  EXPECT_EQ(back.phase, s.phase);
  auto f = load_forger(dir / "a.ckpt");
  EXPECT_EQ(checksum(*f), checksum(*s.forger));
}

TEST(MeanPriorLoss, SameSeedSameValue) {
  auto s = s2r_test::tiny_stage2(18);
  auto x = images(18, 5);
  const double a = mean_prior_loss(s, x, 3, 2, true, 2);
  const double b = mean_prior_loss(s, x, 3, 2, true, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, mean_prior_loss(s, x, 3, 2, false, 2));
}
