#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "seal2real/checkpoint.hpp"
#include "seal2real/dataset.hpp"
#include "seal2real/image.hpp"
#include "support/testing.hpp"

using namespace seal2real;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

constexpr std::array<float, 3> kRed{0.8f, 0.2f, 0.2f};
constexpr std::array<float, 3> kBlue{0.2f, 0.2f, 0.8f};

void write_solid_pngs(const fs::path& dir, std::array<float, 3> rgb, int n, int size, std::uint64_t seed) {
  fs::create_directories(dir);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    Image img(size, size, 3);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        for (int c = 0; c < 3; ++c)
          img.at(x, y, c) = std::clamp(rgb[static_cast<std::size_t>(c)] + static_cast<float>(0.05 * rng.normal()), 0.0f, 1.0f);
    char name[32];
    std::snprintf(name, sizeof name, "img_%03d.png", i);
    write_png(dir / name, img);
  }
}

std::array<double, 3> mean_rgb(const Image& im) {
  std::array<double, 3> m{};
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) m[static_cast<std::size_t>(c)] += im.at(x, y, c);
  for (double& v : m) v /= static_cast<double>(im.width * im.height);
  return m;
}

double distance2(const std::array<double, 3>& a, std::array<float, 3> b) {
  double d = 0.0;
  for (std::size_t c = 0; c < 3; ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
  return d;
}

}  // namespace

TEST(Cli, HelpListsEverySubcommand) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kOk);
  for (const char* name : {"synth", "ingest-real", "train-stage1", "train-stage2", "forge", "build-dataset", "sample",
                           "eval", "compare"})
    EXPECT_NE(r.out.find(name), std::string::npos) << name;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, cli::kUsageError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsageError);
  EXPECT_EQ(run({"synth", "--n", "3", "--bogus"}).code, cli::kUsageError);
  EXPECT_EQ(run({"synth", "--n", "3", "--split", "0.5,0.5,0.5"}).code, cli::kUsageError);
  EXPECT_EQ(run({"eval", "--task", "identification"}).code, cli::kUsageError);
}

TEST(Cli, SynthWritesManifestAndRunRecord) {
  s2r_test::TempDir dir("cli_synth");
  const auto d = dir / "D";
  const auto r = run({"synth", "--n", "10", "--seed", "0", "--out", d.string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto m = dataset::read_manifest(d / dataset::kManifestName);
  EXPECT_EQ(m.entries.size(), 10u);
  const auto rec = nlohmann::json::parse(read_file(d / "run.json"))["synth"];
  EXPECT_EQ(rec["seed"], 0);
  EXPECT_EQ(rec["config"]["n"], "10");
  EXPECT_FALSE(rec["version"].get<std::string>().empty());
}

TEST(Cli, InvalidStepsLeaveNoFiles) {
  s2r_test::TempDir dir("cli_invalid");
  ASSERT_EQ(run({"synth", "--n", "2", "--out", (dir / "D").string()}).code, cli::kOk);
  const auto e = dir / "E";
  const auto r = run({"train-stage1", "--real", (dir / "D").string(), "--synth", (dir / "D").string(), "--max-steps",
                      "-5", "--out", e.string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_FALSE(fs::exists(e));
}

TEST(Cli, ConfigFilePrecedence) {
  s2r_test::TempDir dir("cli_config");
  const auto cfg = dir / "run.toml";
  write_file_atomic(cfg, "n = 3\npreset = \"desk32\"\n");
  ASSERT_EQ(run({"synth", "--config", cfg.string(), "--out", (dir / "A").string()}).code, cli::kOk);
  EXPECT_EQ(dataset::read_manifest(dir / "A" / dataset::kManifestName).entries.size(), 3u);
  ASSERT_EQ(run({"synth", "--config", cfg.string(), "--n", "5", "--out", (dir / "B").string()}).code, cli::kOk);
  EXPECT_EQ(dataset::read_manifest(dir / "B" / dataset::kManifestName).entries.size(), 5u);

  write_file_atomic(cfg, "n = 3\nbogus = 1\n");
  EXPECT_EQ(run({"synth", "--config", cfg.string(), "--out", (dir / "C").string()}).code, cli::kUsageError);
  EXPECT_FALSE(fs::exists(dir / "C"));
  EXPECT_EQ(run({"synth", "--config", (dir / "missing.toml").string()}).code, cli::kUsageError);
}

TEST(Cli, RuntimeFailureExitsOne) {
  s2r_test::TempDir dir("cli_runtime");
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run({"ingest-real", "--input", (dir / "empty").string(), "--out", (dir / "M").string()}).code,
            cli::kRuntimeFailure);
}

TEST(Cli, CompareWritesReport) {
  s2r_test::TempDir dir("cli_compare");
  ASSERT_EQ(run({"synth", "--n", "6", "--preset", "desk32", "--seed", "1", "--out", (dir / "T").string()}).code, 0);
  ASSERT_EQ(run({"synth", "--n", "6", "--preset", "desk32", "--seed", "2", "--out", (dir / "R").string()}).code, 0);
  ASSERT_EQ(run({"synth", "--n", "6", "--preset", "desk32", "--real-proxy", "--purpose", "evaluation", "--seed", "3",
                 "--out", (dir / "E").string()})
                .code,
            0);
  const auto r = run({"compare", "--traditional", (dir / "T").string(), "--realized", (dir / "R").string(),
                      "--evaluation", (dir / "E").string(), "--seeds", "0,1", "--oracle", "--image-size", "32",
                      "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto jsonl = read_file(dir / "out" / "report.jsonl");
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 7);
  EXPECT_NE(read_file(dir / "out" / "report.txt").find("91.50"), std::string::npos);

  ASSERT_EQ(run({"synth", "--n", "5", "--preset", "desk32", "--out", (dir / "S").string()}).code, 0);
  EXPECT_EQ(run({"compare", "--traditional", (dir / "T").string(), "--realized", (dir / "S").string(), "--evaluation",
                 (dir / "E").string(), "--oracle", "--out", (dir / "out2").string()})
                .code,
            cli::kRuntimeFailure);
}

// Two-class toy: red images as the real population, blue as synthetic.
class CliToy : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new s2r_test::TempDir("cli_toy");
    write_solid_pngs(*dir_ / "red", kRed, 64, 16, 1);
    write_solid_pngs(*dir_ / "blue", kBlue, 64, 16, 2);
    ASSERT_EQ(run({"ingest-real", "--input", (*dir_ / "red").string(), "--out", (*dir_ / "R").string()}).code, 0);
    ASSERT_EQ(run({"ingest-real", "--input", (*dir_ / "blue").string(), "--out", (*dir_ / "B").string()}).code, 0);
    const auto r = run({"train-stage1", "--real", (*dir_ / "R").string(), "--synth", (*dir_ / "B").string(), "--preset",
                        "tiny16", "--max-steps", "2000", "--k-prompt", "10", "--k-unet", "10", "--patience", "100000",
                        "--reproducible", "--out", (*dir_ / "S1").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static s2r_test::TempDir* dir_;
};

s2r_test::TempDir* CliToy::dir_ = nullptr;

TEST_F(CliToy, SampleGridAndPromptedClass) {
  const auto s1 = *dir_ / "S1";
  ASSERT_TRUE(fs::is_regular_file(s1 / "stage1.ckpt"));
  ASSERT_TRUE(fs::is_regular_file(s1 / "stage1_log.jsonl"));
  auto r = run({"sample", "--prompt", "real", "--n", "4", "--grid", "out.png", "--out", s1.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Image grid = read_png(s1 / "out.png");
  EXPECT_EQ(grid.width, 32);
  EXPECT_EQ(grid.height, 32);

  for (const std::string prompt : {"real", "fake"}) {
    const auto out = *dir_ / ("samples_" + prompt);
    r = run({"sample", "--checkpoint", (s1 / "stage1.ckpt").string(), "--prompt", prompt, "--n", "20", "--seed", "7",
             "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    int match = 0;
    for (int i = 0; i < 20; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%s_%03d.png", prompt.c_str(), i);
      const auto m = mean_rgb(read_png(out / "samples" / name));
      const bool red = distance2(m, kRed) < distance2(m, kBlue);
      match += red == (prompt == "real");
    }
    EXPECT_GE(match, 18) << prompt;
  }
}

TEST_F(CliToy, StageTwoForgeAndBuild) {
  const auto s2 = *dir_ / "S2";
  auto r = run({"train-stage2", "--stage1", (*dir_ / "S1" / "stage1.ckpt").string(), "--real", (*dir_ / "R").string(),
                "--synth", (*dir_ / "B").string(), "--max-steps", "6", "--warmup", "2", "--k-forger", "2",
                "--k-adversarial", "2", "--forger-channels", "4", "--out", s2.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_TRUE(fs::is_regular_file(s2 / "stage2.ckpt"));
  EXPECT_EQ(StepLog::read(s2 / "stage2_log.jsonl").size(), 6u);

  r = run({"forge", "--stage2", (s2 / "stage2.ckpt").string(), "--input", (*dir_ / "blue").string(), "--out",
           (*dir_ / "F").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_png(*dir_ / "F" / "img_000.png").width, 16);

  // The 16-pixel forger does not fit the 32-pixel generator.
  r = run({"build-dataset", "--n", "4", "--preset", "desk32", "--stage2", (s2 / "stage2.ckpt").string(), "--out",
           (*dir_ / "DS").string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_FALSE(fs::exists(*dir_ / "DS"));

  const auto rec = nlohmann::json::parse(read_file(s2 / "run.json"));
  EXPECT_TRUE(rec.contains("train-stage2"));
}
