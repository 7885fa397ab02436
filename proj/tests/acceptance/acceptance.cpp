#include <torch/torch.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "seal2real/benchmark.hpp"
#include "seal2real/checkpoint.hpp"
#include "seal2real/diffusion.hpp"
#include "seal2real/forger.hpp"
#include "seal2real/seal_synth.hpp"
#include "seal2real/stage1.hpp"
#include "seal2real/stage2.hpp"
#include "support/testing.hpp"

using namespace seal2real;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradBudgetSeconds = 120.0;
constexpr double kVarianceLo = 0.98;
constexpr double kVarianceHi = 1.02;
constexpr int kVarianceDraws = 100000;
constexpr double kScheduleRelTol = 1e-10;
constexpr int kCompositePairs = 100;
constexpr double kToyMatch = 0.90;
constexpr double kToyBudgetSeconds = 600.0;
constexpr int kBenchmarkSeeds = 5;
constexpr int kBenchmarkRequired = 4;
constexpr double kIdentityL2RelTol = 1e-6;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

torch::Tensor images(Rng& rng, int n, torch::Dtype dtype = torch::kFloat64) {
  return s2r_test::uniform_images(rng, n, 8, 0.1, 0.9, dtype);
}

// 1 -------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  Rng rng(1);

  {
    auto s = s2r_test::tiny_stage1(11);
    auto real = images(rng, 2), synth = images(rng, 2);
    auto dr = diffusion::draw_noise(rng, real.sizes(), s.schedule.steps, torch::kFloat64);
    auto ds = diffusion::draw_noise(rng, synth.sizes(), s.schedule.steps, torch::kFloat64);
    auto loss = [&] { return stage1::pair_loss(s, real, dr, synth, ds).total(); };
    worst["prompts(T_r,T_f)"] =
        s2r_test::grad_check_all(loss, {s.real.matrix, s.forgery.matrix}, 16, rng).rel_error;
    worst["unet(theta)"] = s2r_test::grad_check_all(loss, s.model->parameters(), 4, rng).rel_error;
  }
  {
    auto s = s2r_test::tiny_stage2(12);
    auto x = images(rng, 2);
    auto draw = diffusion::draw_noise(rng, x.sizes(), s.prior.schedule.steps, torch::kFloat64);
    auto loss = [&] { return stage2::prior_loss(s, x, draw); };
    // deep forger weights see gradients near 1e-7; smaller steps are roundoff-bound
    worst["prior(phi)"] = s2r_test::grad_check_all(loss, s.forger->parameters(), 6, rng, 1e-3).rel_error;
  }
  {
    stage2::FeatureConfig fc;
    fc.channels = {2, 3, 3, 4, 4};
    stage2::FeatureExtractor fx(fc);
    fx->to(torch::kFloat64);
    auto a = images(rng, 2).requires_grad_(true);
    auto b = images(rng, 2);
    worst["content(I_f)"] =
        s2r_test::grad_check([&] { return stage2::content_loss(a, b, fx); }, a, 64, rng).rel_error;
  }
  {
    auto s = s2r_test::tiny_stage2(13);
    auto real = images(rng, 2), forged = images(rng, 2);
    auto dr = diffusion::draw_noise(rng, real.sizes(), s.prior.schedule.steps, torch::kFloat64);
    auto df = diffusion::draw_noise(rng, forged.sizes(), s.prior.schedule.steps, torch::kFloat64);
    auto loss = [&] { return stage2::adversarial_loss(s, real, dr, forged, df).total(); };
    worst["adversarial(theta)"] = s2r_test::grad_check_all(loss, s.prior.model->parameters(), 4, rng).rel_error;
    worst["adversarial(T_r,T_f)"] =
        s2r_test::grad_check_all(loss, {s.prior.real.matrix, s.prior.forgery.matrix}, 16, rng).rel_error;
  }

  const double elapsed = seconds_since(t0);
  bool ok = elapsed < kGradBudgetSeconds;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err < kGradRelTol;
    detail += fmt("%s=%.2e ", name.c_str(), err);
  }
  return {ok, detail + fmt("(%.1fs, tol %.0e, budget %.0fs)", elapsed, kGradRelTol, kGradBudgetSeconds)};
}

// 2 -------------------------------------------------------------------------

struct Groups {
  std::uint64_t theta, prompts, ae, forger, features;
};

Groups groups_of(stage2::Stage2State& s) {
  return {diffusion::checksum(*s.prior.model), s2r_test::checksum_all({s.prior.real.matrix, s.prior.forgery.matrix}),
          diffusion::checksum(*s.prior.ae), diffusion::checksum(*s.forger), diffusion::checksum(*s.features)};
}

Outcome freeze_contracts() {
  Rng rng(2);
  auto real = images(rng, 3), synth = images(rng, 3);
  std::vector<std::string> broken;
  auto expect = [&](const char* step, const Groups& a, const Groups& b, bool theta, bool prompts, bool forger) {
    if ((a.theta != b.theta) != theta) broken.push_back(std::string(step) + ":theta");
    if ((a.prompts != b.prompts) != prompts) broken.push_back(std::string(step) + ":prompts");
    if ((a.forger != b.forger) != forger) broken.push_back(std::string(step) + ":forger");
    if (a.ae != b.ae) broken.push_back(std::string(step) + ":autoencoder");
    if (a.features != b.features) broken.push_back(std::string(step) + ":features");
  };

  auto s = s2r_test::tiny_stage2(21);
  s.prior.phase = stage1::Phase::prompt_phase;
  auto before = groups_of(s);
  stage1::prompt_step(s.prior, real, synth);
  auto after = groups_of(s);
  expect("prompt_step", before, after, false, true, false);

  s.prior.phase = stage1::Phase::unet_phase;
  before = after;
  stage1::unet_step(s.prior, real, synth);
  after = groups_of(s);
  expect("unet_step", before, after, true, false, false);

  for (auto phase : {stage2::Phase::warmup, stage2::Phase::forger_phase}) {
    s.phase = phase;
    before = after;
    stage2::forger_step(s, synth);
    after = groups_of(s);
    expect(phase == stage2::Phase::warmup ? "forger_step(warmup)" : "forger_step", before, after, false, false, true);
  }

  s.phase = stage2::Phase::adversarial_phase;
  before = after;
  stage2::adversarial_step(s, real, stage2::forge_batch(s, synth));
  after = groups_of(s);
  expect("adversarial_step", before, after, true, true, false);

  std::string detail = broken.empty() ? "every step touched exactly its own parameter group" : "violations:";
  for (const auto& b : broken) detail += " " + b;
  return {broken.empty(), detail};
}

// 3 -------------------------------------------------------------------------

Outcome forward_statistics() {
  const stage1::PriorConfig pc;
  const auto sched = diffusion::make_schedule(pc.unet.num_steps, pc.beta_min, pc.beta_max);
  Rng rng(3);
  double lo = 1e9, hi = -1e9;
  for (int t = 1; t <= sched.steps; ++t) {
    auto z0 = diffusion::randn_like_shape(rng, {kVarianceDraws}, torch::kFloat64);
    auto eps = diffusion::randn_like_shape(rng, {kVarianceDraws}, torch::kFloat64);
    const double v = diffusion::q_sample(z0, t, eps, sched).var().item<double>();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto z0 = diffusion::randn_like_shape(rng, {1000}, torch::kFloat64);
  auto eps = diffusion::randn_like_shape(rng, {1000}, torch::kFloat64);
  const bool clean = torch::equal(diffusion::q_sample_at(z0, eps, 1.0), z0);
  const bool noise = torch::equal(diffusion::q_sample_at(z0, eps, 0.0), eps);
  const bool ok = lo >= kVarianceLo && hi <= kVarianceHi && clean && noise;
  return {ok, fmt("variance range [%.4f, %.4f] over T=%d, %d draws each; z_t=z0 at 1: %s, z_t=eps at 0: %s", lo, hi,
                  sched.steps, kVarianceDraws, clean ? "exact" : "no", noise ? "exact" : "no")};
}

// 4 -------------------------------------------------------------------------

Outcome schedule_oracle() {
  const int T = 1000;
  const double b0 = 1e-4, b1 = 0.02;
  const auto s = diffusion::make_schedule(T, b0, b1);
  long double prod = 1.0L;
  double worst = 0.0;
  for (int t = 1; t <= T; ++t) {
    const long double beta =
        static_cast<long double>(b0) + (static_cast<long double>(b1) - b0) * static_cast<long double>(t - 1) / (T - 1);
    prod *= 1.0L - beta;
    worst = std::max(worst, static_cast<double>(std::fabs((s.alpha_bar_at(t) - prod) / prod)));
  }
  return {worst < kScheduleRelTol, fmt("max rel err %.3e over T=%d (tol %.0e)", worst, T, kScheduleRelTol)};
}

// 5 -------------------------------------------------------------------------

Outcome compositing_oracle() {
  synth::SynthConfig cfg;
  Rng rng(5);
  long changed = 0, missing = 0;
  double worst_iou = 1.0;
  for (int i = 0; i < kCompositePairs; ++i) {
    const auto doc = synth::make_document(rng, cfg.doc_width, cfg.doc_height, cfg.document);
    const auto stamp = synth::synthesize_stamp(synth::sample_seal_spec(rng, cfg));
    const auto sample = synth::composite(doc, stamp, cfg.mask_threshold);
    const auto c = s2r_test::check_composite(doc, stamp, sample, cfg.mask_threshold);
    changed += c.changed_without_ink;
    missing += c.ink_without_change;
    worst_iou = std::min(worst_iou, c.mask_iou);
  }
  const bool ok = changed == 0 && missing == 0 && worst_iou == 1.0;
  return {ok, fmt("%d pairs: changed without ink %ld, ink without change %ld, min mask IoU %.6f", kCompositePairs,
                  changed, missing, worst_iou)};
}

// 6 -------------------------------------------------------------------------

torch::Tensor solid_class(Rng& rng, int n, int size, std::array<double, 3> rgb) {
  auto x = diffusion::randn_like_shape(rng, {n, 3, size, size}) * 0.05;
  for (int c = 0; c < 3; ++c) x.select(1, c) += rgb[static_cast<std::size_t>(c)];
  return x.clamp(0, 1);
}

Outcome toy_generation() {
  const auto t0 = std::chrono::steady_clock::now();
  const int size = 16;
  Rng rng(6);
  auto a = solid_class(rng, 64, size, {0.8, 0.2, 0.2});
  auto b = solid_class(rng, 64, size, {0.2, 0.2, 0.8});

  auto pc = bench::desk32_prior();
  pc.unet.latent_size = size;
  pc.lr_prompt = pc.lr_unet = 2e-3;
  diffusion::Autoencoder ae(pc.autoencoder);
  auto s = stage1::make_stage1_state(pc, ae, 6);
  stage1::Stage1Config c;
  c.max_steps = 2000;
  c.k_prompt = c.k_unet = 10;
  c.patience = c.max_steps;
  stage1::run_stage1(c, a, b, s);

  const auto ca = a.mean(0), cb = b.mean(0);
  Rng sr(7);
  int ok = 0, total = 0;
  double per_role[2] = {0, 0};
  for (auto role : {stage1::PromptRole::real, stage1::PromptRole::forgery}) {
    auto x = stage1::sample_with_prompt(s, role, 32, 50, sr);
    int hits = 0;
    for (int i = 0; i < 32; ++i) {
      const bool near_a = (x[i] - ca).pow(2).sum().item<double>() < (x[i] - cb).pow(2).sum().item<double>();
      hits += near_a == (role == stage1::PromptRole::real);
    }
    per_role[role == stage1::PromptRole::real ? 0 : 1] = hits / 32.0;
    ok += hits;
    total += 32;
  }
  const double match = static_cast<double>(ok) / total;
  const double elapsed = seconds_since(t0);
  return {match >= kToyMatch && elapsed <= kToyBudgetSeconds,
          fmt("prompted-class match %.3f (real %.3f, fake %.3f) in %.0fs (need >= %.2f within %.0fs)", match,
              per_role[0], per_role[1], elapsed, kToyMatch, kToyBudgetSeconds)};
}

// 7, 8 ----------------------------------------------------------------------

std::vector<bench::DomainGapResult> domain_gap_runs(const fs::path& work) {
  std::vector<bench::DomainGapResult> out;
  const auto cfg = bench::domain_gap_defaults();
  for (int seed = 0; seed < kBenchmarkSeeds; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dir = work / ("seed" + std::to_string(seed));
    fs::remove_all(dir);
    out.push_back(bench::run_domain_gap(cfg, static_cast<std::uint64_t>(seed), dir));
    const auto& r = out.back();
    std::printf("  seed %d: prior raw %.5f forged %.5f | MIoU traditional %.4f realized %.4f | forger L1 %.4f (%.0fs)\n",
                seed, r.prior_raw, r.prior_forged, r.miou_traditional, r.miou_realized, r.forger_l1,
                seconds_since(t0));
    std::fflush(stdout);
    fs::remove_all(dir);
  }
  return out;
}

Outcome forger_probe(const std::vector<bench::DomainGapResult>& runs) {
  int wins = 0;
  for (const auto& r : runs) wins += r.prior_forged < r.prior_raw;
  return {wins >= kBenchmarkRequired,
          fmt("forged < raw prior loss in %d/%d seeds (need %d)", wins, kBenchmarkSeeds, kBenchmarkRequired)};
}

Outcome downstream_direction(const std::vector<bench::DomainGapResult>& runs) {
  int wins = 0;
  std::vector<double> trad, real;
  for (const auto& r : runs) {
    wins += r.miou_realized >= r.miou_traditional;
    trad.push_back(r.miou_traditional);
    real.push_back(r.miou_realized);
  }
  const eval::ReferenceNumbers ref;
  return {wins >= kBenchmarkRequired,
          fmt("realized >= traditional MIoU in %d/%d seeds (need %d); median %.1f -> %.1f; published %.1f -> %.1f "
              "(reference only, not reproduced)",
              wins, kBenchmarkSeeds, kBenchmarkRequired, 100 * eval::median(trad), 100 * eval::median(real),
              ref.segmentation[0], ref.segmentation[1])};
}

// 9 -------------------------------------------------------------------------

Outcome content_loss_suite() {
  Rng rng(9);
  stage2::FeatureExtractor fx{stage2::FeatureConfig{}};
  bool zero = true, symmetric = true;
  for (int i = 0; i < 10; ++i) {
    auto a = s2r_test::uniform_images(rng, 2, 16, 0.0, 1.0, torch::kFloat32).requires_grad_(true);
    auto b = s2r_test::uniform_images(rng, 2, 16, 0.0, 1.0, torch::kFloat32);
    auto same = stage2::content_loss(a, a.detach().clone(), fx);
    auto g = torch::autograd::grad({same}, {a})[0];
    zero = zero && same.item<float>() == 0.0f && g.abs().max().item<float>() == 0.0f;
    symmetric = symmetric && torch::equal(stage2::content_loss(a, b, fx), stage2::content_loss(b, a.detach(), fx));
  }

  stage2::FeatureConfig ic;
  ic.identity = true;
  ic.alpha = {1.0, 0.0, 0.0, 0.0, 0.0};
  stage2::FeatureExtractor id(ic);
  auto a = s2r_test::uniform_images(rng, 3, 16, 0.0, 1.0);
  auto b = s2r_test::uniform_images(rng, 3, 16, 0.0, 1.0);
  const double got = stage2::content_loss(a, b, id).item<double>();
  double expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto d = (a[i] - b[i]).contiguous();
    const double* p = d.data_ptr<double>();
    long double sq = 0.0L;
    for (int64_t k = 0; k < d.numel(); ++k) sq += static_cast<long double>(p[k]) * p[k];
    expect += static_cast<double>(std::sqrt(sq));
  }
  expect /= 3.0;
  const double rel = std::abs(got - expect) / expect;
  const bool ok = zero && symmetric && rel < kIdentityL2RelTol;
  return {ok, fmt("zero-on-equal %s, symmetry %s, identity-mode vs L2 rel err %.2e (tol %.0e)",
                  zero ? "exact" : "FAILED", symmetric ? "exact" : "FAILED", rel, kIdentityL2RelTol)};
}

// 10 ------------------------------------------------------------------------

bool cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  if (code != 0) std::printf("  command failed (%d): %s\n", code, err.str().c_str());
  return code == 0;
}

bool pipeline(const fs::path& root) {
  fs::remove_all(root);
  const auto p = [&](const char* rel) { return (root / rel).string(); };
  const std::vector<std::string> rep{"--reproducible", "--seed", "10"};
  auto with = [&](std::vector<std::string> args) {
    args.insert(args.end(), rep.begin(), rep.end());
    return cli(args);
  };
  return with({"synth", "--n", "24", "--preset", "desk32", "--split", "0.8,0.1,0.1", "--out", p("traditional")}) &&
         with({"synth", "--n", "24", "--preset", "desk32", "--real-proxy", "--out", p("real")}) &&
         with({"synth", "--n", "16", "--preset", "desk32", "--real-proxy", "--purpose", "evaluation", "--out",
               p("evaluation")}) &&
         with({"train-stage1", "--real", p("real"), "--synth", p("traditional"), "--preset", "desk32", "--max-steps",
               "40", "--k-prompt", "5", "--k-unet", "5", "--checkpoint-every", "20", "--out", p("stage1")}) &&
         with({"train-stage2", "--stage1", p("stage1/stage1.ckpt"), "--real", p("real"), "--synth", p("traditional"),
               "--max-steps", "30", "--warmup", "5", "--k-forger", "5", "--k-adversarial", "5", "--w", "0.02",
               "--lr-forger", "1e-3", "--checkpoint-every", "15", "--out", p("stage2")}) &&
         with({"build-dataset", "--n", "24", "--preset", "desk32", "--stage2", p("stage2/stage2.ckpt"), "--out",
               p("realized")}) &&
         with({"sample", "--checkpoint", p("stage2/stage2.ckpt"), "--prompt", "real", "--n", "4", "--steps", "20",
               "--grid", "grid.png", "--out", p("samples")}) &&
         with({"compare", "--traditional", p("traditional"), "--realized", p("realized"), "--evaluation",
               p("evaluation"), "--image-size", "32", "--seg-steps", "30", "--id-steps", "30", "--rec-steps", "30",
               "--seeds", "0,1", "--out", p("report")});
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& de : fs::recursive_directory_iterator(root)) {
    if (!de.is_regular_file() || de.path().filename() == "run.json") continue;
    files[fs::relative(de.path(), root).generic_string()] = read_file(de.path());
  }
  return files;
}

Outcome end_to_end_determinism(const fs::path& work) {
  if (!pipeline(work / "run_a") || !pipeline(work / "run_b")) return {false, "pipeline command failed"};
  const auto a = tree_bytes(work / "run_a");
  const auto b = tree_bytes(work / "run_b");
  int manifests = 0, checkpoints = 0, reports = 0;
  std::vector<std::string> differing;
  for (const auto& [rel, bytes] : a) {
    const auto it = b.find(rel);
    if (it == b.end() || it->second != bytes) differing.push_back(rel);
    const auto name = fs::path(rel).filename().string();
    manifests += name == "manifest.jsonl";
    checkpoints += fs::path(rel).extension() == ".ckpt";
    reports += name.starts_with("report.");
  }
  for (const auto& [rel, bytes] : b)
    if (!a.contains(rel)) differing.push_back(rel);
  const bool covered = manifests >= 4 && checkpoints >= 4 && reports == 2;
  std::string detail = fmt("%zu files compared (%d manifests, %d checkpoints, %d reports), %zu differ", a.size(),
                           manifests, checkpoints, reports, differing.size());
  for (std::size_t i = 0; i < std::min<std::size_t>(differing.size(), 5); ++i) detail += " " + differing[i];
  fs::remove_all(work / "run_a");
  fs::remove_all(work / "run_b");
  return {differing.empty() && covered, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work = fs::temp_directory_path() / "s2r_acceptance";
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  fs::create_directories(work);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };
  auto guarded = [&](int id, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(id)) return;
    try {
      report(id, name, f());
    } catch (const std::exception& e) {
      report(id, name, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "gradient suite", gradient_suite);
  guarded(2, "freeze contracts", freeze_contracts);
  guarded(3, "forward-process statistics", forward_statistics);
  guarded(4, "schedule oracle", schedule_oracle);
  guarded(5, "compositing oracle", compositing_oracle);
  guarded(6, "toy conditional generation", toy_generation);
  if (wanted(7) || wanted(8)) {
    std::vector<bench::DomainGapResult> runs;
    std::string error;
    try {
      runs = domain_gap_runs(work / "domain_gap");
    } catch (const std::exception& e) {
      error = std::string("exception: ") + e.what();
    }
    if (wanted(7)) report(7, "forger efficacy probe", error.empty() ? forger_probe(runs) : Outcome{false, error});
    if (wanted(8)) report(8, "downstream direction", error.empty() ? downstream_direction(runs) : Outcome{false, error});
  }
  guarded(9, "content-loss pseudometric", content_loss_suite);
  guarded(10, "end-to-end determinism", [&] { return end_to_end_determinism(work / "determinism"); });
  return failures == 0 ? 0 : 1;
}
