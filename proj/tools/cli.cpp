#include "cli.hpp"

#include <torch/torch.h>

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seal2real/benchmark.hpp"
#include "seal2real/checkpoint.hpp"
#include "seal2real/dataset.hpp"
#include "seal2real/error.hpp"
#include "seal2real/eval.hpp"
#include "seal2real/image.hpp"
#include "seal2real/stage1.hpp"
#include "seal2real/stage2.hpp"
#include "seal2real/tensor_image.hpp"

namespace seal2real::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using synth::Provenance;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void usage(bool ok, const std::string& what) {
  if (!ok) throw UsageError(what);
}

struct Common {
  std::uint64_t seed = 0;
  fs::path out = ".";
  bool reproducible = false;
};

struct Command {
  CLI::App* app = nullptr;
  std::function<void()> validate;
  // Returns the derived seeds it used, for the run record.
  std::function<json(std::ostream&)> run;
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Common& c) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--seed", c.seed, "Global seed")->capture_default_str();
  sub->add_option("--out", c.out, "Output root; relative output paths resolve against it")->capture_default_str();
  sub->add_flag("--reproducible", c.reproducible, "Single-threaded deterministic execution");
  // Consumed by expand_config before parsing; registered for --help.
  sub->add_option("--config", "TOML file of flag = value pairs; command-line flags take precedence")->type_name("FILE");
  return sub;
}

// Replaces `--config FILE` by the file's settings that the command line does
// not already give. Unknown keys surface as unexpected arguments.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  const auto it = std::find_if(args.begin(), args.end(),
                               [](const std::string& a) { return a == "--config" || a.starts_with("--config="); });
  if (it == args.end()) return args;
  std::string file;
  if (*it == "--config") {
    usage(std::next(it) != args.end(), "--config needs a file");
    file = *std::next(it);
    args.erase(it, std::next(it, 2));
  } else {
    file = it->substr(std::string_view("--config=").size());
    args.erase(it);
  }
  usage(fs::is_regular_file(file), "config file not found: " + file);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(file);
  } catch (const CLI::Error& e) {
    throw UsageError("cannot read config " + file + ": " + e.what());
  }
  const auto given = args;
  for (const auto& item : items) {
    usage(item.parents.empty(), "config sections are not supported: " + item.fullname());
    const std::string flag = "--" + item.name;
    const bool on_command_line = std::any_of(given.begin(), given.end(), [&](const std::string& a) {
      return a == flag || a.starts_with(flag + "=");
    });
    if (on_command_line) continue;
    if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "false")) {
      if (item.inputs[0] == "true") args.push_back(flag);
      continue;
    }
    args.push_back(flag);
    args.insert(args.end(), item.inputs.begin(), item.inputs.end());
  }
  return args;
}

const CLI::Validator kManifest(
    [](std::string& s) -> std::string {
      fs::path p(s);
      if (fs::is_directory(p)) p /= dataset::kManifestName;
      return fs::is_regular_file(p) ? std::string() : "no manifest at " + s;
    },
    "MANIFEST");

dataset::Manifest load_manifest_arg(const fs::path& p) {
  return dataset::read_manifest(fs::is_directory(p) ? p / dataset::kManifestName : p);
}

// Entries of the preferred provenance, or every entry when there are none.
torch::Tensor manifest_images(const dataset::Manifest& m, Provenance prefer, int size) {
  auto entries = m.select(prefer);
  if (entries.empty())
    for (const auto& e : m.entries) entries.push_back(&e);
  require(!entries.empty(), Errc::EmptyDataset, "manifest has no entries");
  return dataset::load_images(m, entries, size);
}

synth::SynthConfig synth_preset(const std::string& name, bool real) {
  if (name == "desk32") return real ? bench::desk32_real() : bench::desk32_synth();
  return real ? synth::SynthConfig::real_proxy() : synth::SynthConfig{};
}

stage1::PriorConfig prior_preset(const std::string& name) {
  if (name == "desk32") return bench::desk32_prior();
  if (name == "tiny16") {
    auto p = bench::desk32_prior();
    p.unet.latent_size = 16;
    p.lr_prompt = p.lr_unet = 2e-3;
    return p;
  }
  return {};
}

int prior_image_size(const stage1::PriorConfig& p) { return p.unet.latent_size * p.autoencoder.factor; }

std::array<double, 3> ratios_of(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }

void check_ratios(const std::vector<double>& v) {
  if (v.empty()) return;
  bool ok = v.size() == 3;
  for (double r : v) ok = ok && r > 0.0 && std::isfinite(r);
  usage(ok && std::abs(v[0] + v[1] + v[2] - 1.0) <= 1e-9, "--split needs three positive ratios summing to 1");
}

fs::path under(const fs::path& root, const fs::path& p) { return p.is_absolute() ? p : root / p; }

json option_values(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    if (o->get_lnames().empty()) continue;
    const auto& name = o->get_lnames().front();
    if (name == "help" || name == "config") continue;
    const auto& res = o->results();
    if (o->get_expected_min() == 0) {
      j[name] = o->count() > 0;
    } else if (res.empty()) {
      j[name] = o->get_default_str();
    } else {
      std::string joined;
      for (std::size_t i = 0; i < res.size(); ++i) joined += (i ? "," : "") + res[i];
      j[name] = joined;
    }
  }
  return j;
}

void write_run_record(const fs::path& out, const std::string& command, json record) {
  const auto path = out / "run.json";
  json all = json::object();
  if (fs::is_regular_file(path)) {
    try {
      all = json::parse(read_file(path));
    } catch (const json::exception&) {
      all = json::object();
    }
  }
  all[command] = std::move(record);
  write_file_atomic(path, all.dump(2) + "\n");
}

// --- synth / build-dataset ----------------------------------------------------

struct SynthArgs {
  int n = 0;
  std::string preset = "default";
  bool real_proxy = false;
  std::string purpose = "training";
  std::vector<double> split;
};

Command synth_command(CLI::App& app, SynthArgs& a, Common& c) {
  auto* sub = add_command(app, "synth", "Generate labeled synthetic (or real-style) samples", c);
  sub->add_option("--n", a.n, "Number of samples")->required()->check(CLI::PositiveNumber);
  sub->add_option("--preset", a.preset, "Generator preset")->check(CLI::IsMember({"default", "desk32"}))->capture_default_str();
  sub->add_flag("--real-proxy", a.real_proxy, "Use the held-out real-style appearance law");
  sub->add_option("--purpose", a.purpose, "Real-style labels: dropped for training, kept for evaluation")
      ->check(CLI::IsMember({"training", "evaluation"}))
      ->capture_default_str();
  sub->add_option("--split", a.split, "train,val,test ratios")->delimiter(',');
  return {sub, [&a] { check_ratios(a.split); },
          [&a, &c](std::ostream& out) {
            const auto cfg = synth_preset(a.preset, a.real_proxy);
            auto m = a.real_proxy
                         ? dataset::generate_real_proxy(a.n, cfg,
                                                        a.purpose == "evaluation" ? dataset::Purpose::evaluation
                                                                                  : dataset::Purpose::training,
                                                        c.out, c.seed)
                         : dataset::generate_paired(a.n, cfg, nullptr, c.out, c.seed);
            if (!a.split.empty()) {
              m = dataset::split(m, ratios_of(a.split), c.seed);
              dataset::write_manifest(c.out / dataset::kManifestName, m);
            }
            out << "wrote " << m.entries.size() << " entries to " << (c.out / dataset::kManifestName).string() << "\n";
            return json{{"generator", c.seed}, {"split", c.seed}};
          }};
}

struct BuildArgs {
  int n = 0;
  std::string preset = "default";
  fs::path stage2;
  std::vector<double> split{0.8, 0.1, 0.1};
  stage2::ForgerNet forger{nullptr};
};

Command build_command(CLI::App& app, BuildArgs& a, Common& c) {
  auto* sub = add_command(app, "build-dataset", "Paired synthetic/forged dataset with a train/val/test split", c);
  sub->add_option("--n", a.n, "Number of synthetic samples")->required()->check(CLI::PositiveNumber);
  sub->add_option("--preset", a.preset, "Generator preset")->check(CLI::IsMember({"default", "desk32"}))->capture_default_str();
  sub->add_option("--stage2", a.stage2, "Stage-2 checkpoint; adds a forged sibling per sample")->check(CLI::ExistingFile);
  sub->add_option("--split", a.split, "train,val,test ratios")->delimiter(',')->capture_default_str();
  return {sub,
          [&a] {
            check_ratios(a.split);
            usage(!a.split.empty(), "--split must not be empty");
            if (a.stage2.empty()) return;
            a.forger = stage2::load_forger(a.stage2);
            const auto cfg = synth_preset(a.preset, false);
            usage(a.forger->config().image_size == cfg.doc_width && cfg.doc_width == cfg.doc_height,
                  "forger image size " + std::to_string(a.forger->config().image_size) + " does not match preset '" +
                      a.preset + "'");
          },
          [&a, &c](std::ostream& out) {
            const auto cfg = synth_preset(a.preset, false);
            auto m = dataset::generate_paired(a.n, cfg, a.forger.is_empty() ? nullptr : &a.forger, c.out, c.seed);
            m = dataset::split(m, ratios_of(a.split), c.seed);
            dataset::write_manifest(c.out / dataset::kManifestName, m);
            out << "wrote " << m.entries.size() << " entries to " << (c.out / dataset::kManifestName).string() << "\n";
            return json{{"generator", c.seed}, {"split", c.seed}};
          }};
}

// --- ingest-real --------------------------------------------------------------

struct IngestArgs {
  fs::path input;
};

Command ingest_command(CLI::App& app, IngestArgs& a, Common& c) {
  auto* sub = add_command(app, "ingest-real", "Index a directory of real seal scans (unlabeled)", c);
  sub->add_option("--input", a.input, "Directory of PNG scans")->required()->check(CLI::ExistingDirectory);
  return {sub, [] {},
          [&a, &c](std::ostream& out) {
            std::vector<std::string> warnings;
            fs::create_directories(c.out);
            auto m = dataset::ingest_real(a.input, c.out / dataset::kManifestName, &warnings);
            out << "indexed " << m.entries.size() << " images (" << warnings.size() << " skipped)\n";
            return json::object();
          }};
}

// --- train-stage1 -------------------------------------------------------------

struct Stage1Args {
  fs::path real, synth, resume;
  std::string preset = "default";
  stage1::Stage1Config run;
  double lr = 0.0;
  int ae_steps = 1500;
};

Command stage1_command(CLI::App& app, Stage1Args& a, Common& c) {
  auto* sub = add_command(app, "train-stage1", "Learn the real/forgery prompts and the diffusion prior", c);
  sub->add_option("--real", a.real, "Real manifest")->required()->check(kManifest);
  sub->add_option("--synth", a.synth, "Synthetic manifest")->required()->check(kManifest);
  sub->add_option("--preset", a.preset, "Model preset")->check(CLI::IsMember({"default", "desk32", "tiny16"}))->capture_default_str();
  sub->add_option("--max-steps", a.run.max_steps, "Step budget")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--k-prompt", a.run.k_prompt, "Prompt steps per block")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--k-unet", a.run.k_unet, "Backbone steps per block")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--batch", a.run.batch, "Images per population per step")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--lr", a.lr, "Learning rate for prompts and backbone (0 keeps the preset)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--patience", a.run.patience, "Plateau patience in steps")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--checkpoint-every", a.run.checkpoint_every, "Periodic checkpoints (0 disables)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--ae-steps", a.ae_steps, "Autoencoder training steps (latent presets)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--resume", a.resume, "Continue from a stage-1 checkpoint")->check(CLI::ExistingFile);
  return {sub, [] {},
          [&a, &c](std::ostream& out) {
            auto cfg = prior_preset(a.preset);
            if (a.lr > 0.0) cfg.lr_prompt = cfg.lr_unet = a.lr;
            stage1::Stage1State s;
            if (!a.resume.empty()) {
              s = stage1::load_stage1(a.resume);
              cfg = s.config;
            }
            const int size = prior_image_size(cfg);
            auto real = manifest_images(load_manifest_arg(a.real), Provenance::real, size);
            auto synth = manifest_images(load_manifest_arg(a.synth), Provenance::synthetic, size);
            const auto ae_seed = mix_seed(c.seed, 2);
            const auto model_seed = mix_seed(c.seed, 1);
            if (a.resume.empty()) {
              diffusion::Autoencoder ae(cfg.autoencoder);
              diffusion::AutoencoderTrainConfig tc;
              tc.steps = a.ae_steps;
              Rng ae_rng(ae_seed);
              diffusion::train_autoencoder(ae, torch::cat({real, synth}), tc, ae_rng);
              s = stage1::make_stage1_state(cfg, ae, model_seed);
            }
            fs::create_directories(c.out);
            auto run = a.run;
            run.checkpoint_dir = c.out / "checkpoints";
            const auto log = c.out / "stage1_log.jsonl";
            fs::remove(log);
            s.log = StepLog(log);
            stage1::run_stage1(run, real, synth, s);
            stage1::save_stage1(c.out / "stage1.ckpt", s);
            out << "stage 1 finished at step " << s.step;
            if (!s.log.empty()) out << ", last loss " << s.log.back()["loss"].get<double>();
            out << "\n";
            return json{{"autoencoder", ae_seed}, {"model", model_seed}};
          }};
}

// --- train-stage2 -------------------------------------------------------------

struct Stage2Args {
  fs::path stage1, real, synth;
  stage2::Stage2Config run;
  stage2::ForgerSetup setup;
};

Command stage2_command(CLI::App& app, Stage2Args& a, Common& c) {
  auto* sub = add_command(app, "train-stage2", "Train the forger against the stage-1 prior", c);
  sub->add_option("--stage1", a.stage1, "Stage-1 checkpoint (default: <out>/stage1.ckpt)");
  sub->add_option("--real", a.real, "Real manifest")->required()->check(kManifest);
  sub->add_option("--synth", a.synth, "Synthetic manifest")->required()->check(kManifest);
  sub->add_option("--max-steps", a.run.max_steps, "Step budget")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--warmup", a.run.s_warm, "Content-only warmup steps")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--k-forger", a.run.k_forger, "Forger steps per block")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--k-adversarial", a.run.k_adversarial, "Prior steps per block")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--batch", a.run.batch, "Images per step")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--patience", a.run.patience, "Plateau patience in steps")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--checkpoint-every", a.run.checkpoint_every, "Periodic checkpoints (0 disables)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sub->add_option("--w", a.setup.w, "Content-loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--lr-forger", a.setup.lr_forger, "Forger learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--forger-channels", a.setup.forger.channels, "Forger width")->check(CLI::PositiveNumber)->capture_default_str();
  return {sub,
          [&a, &c] {
            if (a.stage1.empty()) a.stage1 = c.out / "stage1.ckpt";
            usage(fs::is_regular_file(a.stage1), "stage-1 checkpoint not found: " + a.stage1.string());
          },
          [&a, &c](std::ostream& out) {
            auto s1 = stage1::load_stage1(a.stage1);
            const int size = prior_image_size(s1.config);
            auto real = manifest_images(load_manifest_arg(a.real), Provenance::real, size);
            auto synth = manifest_images(load_manifest_arg(a.synth), Provenance::synthetic, size);
            auto setup = a.setup;
            setup.forger.image_size = size;
            const auto forger_seed = mix_seed(c.seed, 1);
            auto s = stage2::make_stage2_state(std::move(s1), setup, forger_seed);
            fs::create_directories(c.out);
            auto run = a.run;
            run.checkpoint_dir = c.out / "checkpoints";
            const auto log = c.out / "stage2_log.jsonl";
            fs::remove(log);
            s.log = StepLog(log);
            stage2::run_stage2(run, real, synth, s);
            stage2::save_stage2(c.out / "stage2.ckpt", s);
            out << "stage 2 finished at step " << s.step << "\n";
            return json{{"forger", forger_seed}};
          }};
}

// --- forge --------------------------------------------------------------------

struct ForgeArgs {
  fs::path stage2, input;
};

Command forge_command(CLI::App& app, ForgeArgs& a, Common& c) {
  auto* sub = add_command(app, "forge", "Realize synthetic images with a trained forger", c);
  sub->add_option("--stage2", a.stage2, "Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  sub->add_option("--input", a.input, "PNG file or directory of PNGs")->required()->check(CLI::ExistingPath);
  return {sub, [] {},
          [&a, &c](std::ostream& out) {
            auto forger = stage2::load_forger(a.stage2);
            const int size = forger->config().image_size;
            std::vector<fs::path> files;
            if (fs::is_directory(a.input)) {
              for (const auto& de : fs::directory_iterator(a.input))
                if (de.is_regular_file() && looks_like_png(de.path())) files.push_back(de.path());
              std::sort(files.begin(), files.end());
            } else {
              files.push_back(a.input);
            }
            require(!files.empty(), Errc::EmptyDirectory, "no PNG images in " + a.input.string());
            fs::create_directories(c.out);
            for (const auto& f : files) {
              Image img = read_png(f);
              if (img.channels > 3) {
                Image rgb(img.width, img.height, 3);
                for (int y = 0; y < img.height; ++y)
                  for (int x = 0; x < img.width; ++x)
                    for (int ch = 0; ch < 3; ++ch) rgb.at(x, y, ch) = img.at(x, y, ch);
                img = rgb;
              }
              require(img.channels == 3, Errc::ShapeMismatch, f.string() + " is not an RGB image");
              if (img.width != size || img.height != size) img = resize_bilinear(img, size, size);
              write_png(c.out / f.filename(), stage2::forge(forger, img));
            }
            out << "forged " << files.size() << " images into " << c.out.string() << "\n";
            return json::object();
          }};
}

// --- sample -------------------------------------------------------------------

struct SampleArgs {
  fs::path checkpoint, grid;
  std::string prompt = "real";
  std::string sampler = "ddpm";
  int n = 4;
  int steps = 0;
};

Command sample_command(CLI::App& app, SampleArgs& a, Common& c) {
  auto* sub = add_command(app, "sample", "Generate images from the learned real or fake prompt", c);
  sub->add_option("--checkpoint", a.checkpoint, "Stage-1 or stage-2 checkpoint (default: <out>/stage1.ckpt)");
  sub->add_option("--prompt", a.prompt, "Conditioning prompt")->check(CLI::IsMember({"real", "fake"}))->capture_default_str();
  sub->add_option("--n", a.n, "Number of samples")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--steps", a.steps, "Reverse steps (0 = all)")->check(CLI::NonNegativeNumber)->capture_default_str();
  sub->add_option("--sampler", a.sampler, "Reverse process")->check(CLI::IsMember({"ddpm", "ddim"}))->capture_default_str();
  sub->add_option("--grid", a.grid, "Also write a tiled grid image here");
  return {sub,
          [&a, &c] {
            if (a.checkpoint.empty()) a.checkpoint = c.out / "stage1.ckpt";
            usage(fs::is_regular_file(a.checkpoint), "checkpoint not found: " + a.checkpoint.string());
          },
          [&a, &c](std::ostream& out) {
            auto s = stage1::load_stage1(a.checkpoint);
            const int steps = a.steps > 0 ? a.steps : s.schedule.steps;
            Rng rng(c.seed);
            const auto role = a.prompt == "real" ? stage1::PromptRole::real : stage1::PromptRole::forgery;
            const auto sampler = a.sampler == "ddim" ? diffusion::Sampler::ddim : diffusion::Sampler::ddpm;
            auto x = stage1::sample_with_prompt(s, role, a.n, steps, rng, sampler);
            const auto dir = c.out / "samples";
            fs::create_directories(dir);
            std::vector<Image> tiles;
            for (int i = 0; i < a.n; ++i) {
              tiles.push_back(quantize8(to_image(x[i])));
              char name[32];
              std::snprintf(name, sizeof name, "%s_%03d.png", a.prompt.c_str(), i);
              write_png(dir / name, tiles.back());
            }
            if (!a.grid.empty()) {
              const auto path = under(c.out, a.grid);
              if (path.has_parent_path()) fs::create_directories(path.parent_path());
              const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(a.n))));
              write_png(path, tile_grid(tiles, cols));
            }
            out << "wrote " << a.n << " samples to " << dir.string() << "\n";
            return json{{"sampler", c.seed}};
          }};
}

// --- eval / compare -----------------------------------------------------------

void add_eval_options(CLI::App* sub, eval::EvalConfig& e) {
  sub->add_option("--image-size", e.image_size, "Model input size")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--seg-steps", e.seg_steps, "Segmenter training steps")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--id-steps", e.id_steps, "Identifier training steps")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--rec-steps", e.rec_steps, "Reader training steps")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_flag("--oracle", e.oracle, "Replace predictions by ground truth");
}

struct EvalArgs {
  std::string task;
  fs::path train, test, real, fake;
  eval::EvalConfig cfg;
};

Command eval_command(CLI::App& app, EvalArgs& a, Common& c) {
  auto* sub = add_command(app, "eval", "Train and score one downstream task", c);
  sub->add_option("--task", a.task, "Downstream task")
      ->required()
      ->check(CLI::IsMember({"segmentation", "identification", "recognition"}));
  sub->add_option("--train", a.train, "Training manifest (segmentation, recognition)")->check(kManifest);
  sub->add_option("--test", a.test, "Labeled test manifest (segmentation, recognition)")->check(kManifest);
  sub->add_option("--real", a.real, "Real manifest (identification)")->check(kManifest);
  sub->add_option("--fake", a.fake, "Synthetic or forged manifest (identification)")->check(kManifest);
  add_eval_options(sub, a.cfg);
  sub->add_flag("--shuffle-labels", a.cfg.shuffle_labels, "Permute identification labels (null control)");
  return {sub,
          [&a] {
            if (a.task == "identification")
              usage(!a.real.empty() && !a.fake.empty(), "identification needs --real and --fake");
            else
              usage(!a.train.empty() && !a.test.empty(), a.task + " needs --train and --test");
          },
          [&a, &c](std::ostream& out) {
            const auto seed = mix_seed(c.seed, 1);
            double value = 0.0;
            if (a.task == "identification") {
              value = eval::eval_identification(load_manifest_arg(a.real), load_manifest_arg(a.fake), a.cfg, seed);
            } else {
              const auto train = load_manifest_arg(a.train);
              const auto test = load_manifest_arg(a.test);
              value = a.task == "segmentation" ? eval::eval_segmentation(train, test, a.cfg, seed)
                                               : eval::eval_recognition(train, test, a.cfg, seed);
            }
            fs::create_directories(c.out);
            write_file_atomic(c.out / ("eval_" + a.task + ".json"),
                              json{{"task", a.task}, {"value", value}, {"seed", c.seed}}.dump() + "\n");
            out << a.task << " " << value << "\n";
            return json{{"task", seed}};
          }};
}

struct CompareArgs {
  fs::path traditional, realized, evaluation;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<std::string> tasks{"segmentation", "identification", "recognition"};
  eval::EvalConfig cfg;
};

Command compare_command(CLI::App& app, CompareArgs& a, Common& c) {
  auto* sub = add_command(app, "compare", "Traditional vs realized training data on every task", c);
  sub->add_option("--traditional", a.traditional, "Manifest of traditional synthetics")->required()->check(kManifest);
  sub->add_option("--realized", a.realized, "Manifest of realized (forged) data")->required()->check(kManifest);
  sub->add_option("--evaluation", a.evaluation, "Labeled real-style test manifest")->required()->check(kManifest);
  sub->add_option("--seeds", a.seeds, "Evaluation seeds")->delimiter(',')->capture_default_str();
  sub->add_option("--tasks", a.tasks, "Tasks to run")
      ->delimiter(',')
      ->check(CLI::IsMember({"segmentation", "identification", "recognition"}))
      ->capture_default_str();
  add_eval_options(sub, a.cfg);
  return {sub, [&a] { usage(!a.seeds.empty() && !a.tasks.empty(), "--seeds and --tasks must not be empty"); },
          [&a, &c](std::ostream& out) {
            auto cfg = a.cfg;
            auto has = [&](const char* t) { return std::find(a.tasks.begin(), a.tasks.end(), t) != a.tasks.end(); };
            cfg.run_segmentation = has("segmentation");
            cfg.run_identification = has("identification");
            cfg.run_recognition = has("recognition");
            const auto report = eval::compare_datasets(load_manifest_arg(a.traditional), load_manifest_arg(a.realized),
                                                       load_manifest_arg(a.evaluation), cfg, a.seeds);
            fs::create_directories(c.out);
            write_file_atomic(c.out / "report.jsonl", report.to_jsonl());
            const auto table = report.to_table();
            write_file_atomic(c.out / "report.txt", table);
            out << table;
            return json::object();
          }};
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Seal image synthesis, realization and evaluation", "s2r"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SEAL2REAL_VERSION);

  Common common;
  SynthArgs synth_args;
  IngestArgs ingest_args;
  Stage1Args stage1_args;
  Stage2Args stage2_args;
  ForgeArgs forge_args;
  BuildArgs build_args;
  SampleArgs sample_args;
  EvalArgs eval_args;
  CompareArgs compare_args;
  const std::vector<Command> commands{
      synth_command(app, synth_args, common),        ingest_command(app, ingest_args, common),
      stage1_command(app, stage1_args, common),      stage2_command(app, stage2_args, common),
      forge_command(app, forge_args, common),        build_command(app, build_args, common),
      sample_command(app, sample_args, common),      eval_command(app, eval_args, common),
      compare_command(app, compare_args, common),
  };

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(args);
  } catch (const UsageError& e) {
    err << e.what() << "\n";
    return kUsageError;
  }
  try {
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsageError;
  }

  const Command* cmd = nullptr;
  for (const auto& c : commands)
    if (c.app->parsed()) cmd = &c;
  const std::string name = cmd->app->get_name();

  try {
    cmd->validate();
  } catch (const UsageError& e) {
    err << name << ": " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << name << ": " << e.what() << "\n";
    return kRuntimeFailure;
  }

  if (common.reproducible) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }

  try {
    const json seeds = cmd->run(out);
    fs::create_directories(common.out);
    write_run_record(common.out, name,
                     json{{"version", SEAL2REAL_VERSION},
                          {"seed", common.seed},
                          {"reproducible", common.reproducible},
                          {"config", option_values(*cmd->app)},
                          {"derived_seeds", seeds}});
  } catch (const std::exception& e) {
    err << name << ": " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kOk;
}

}  // namespace seal2real::cli
