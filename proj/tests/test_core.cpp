#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "seal2real/checkpoint.hpp"
#include "seal2real/diffusion.hpp"
#include "seal2real/error.hpp"
#include "seal2real/hash.hpp"
#include "seal2real/image.hpp"
#include "seal2real/rng.hpp"
#include "seal2real/step_log.hpp"
#include "seal2real/tensor_image.hpp"
#include "support/testing.hpp"

using namespace seal2real;
namespace fs = std::filesystem;

TEST(Rng, SameSeedSameStream) {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  EXPECT_EQ(a.draws(), 100u);
}

TEST(Rng, UniformBounds) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
  std::set<std::int64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto k = r.uniform_int(-2, 3);
    ASSERT_GE(k, -2);
    ASSERT_LE(k, 3);
    seen.insert(k);
  }
  EXPECT_EQ(seen.size(), 6u);
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(s2 / n - mean * mean, 1.0, 0.02);
}

TEST(Rng, StateRoundTrip) {
  Rng a(9);
  for (int i = 0; i < 17; ++i) a.normal();
  Rng b;
  b.restore(a.state());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, ForkAndMixDiffer) {
  Rng a(5);
  auto c1 = a.fork(1);
  auto c2 = a.fork(2);
  EXPECT_NE(c1.next_u64(), c2.next_u64());
  EXPECT_NE(mix_seed(0, 1), mix_seed(0, 2));
  EXPECT_NE(mix_seed(1, 0), mix_seed(0, 1));
}

TEST(Hash, KnownFnvVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Image, QuantizeIsIdempotent) {
  Image img(4, 3, 3);
  Rng r(3);
  for (auto& p : img.pixels) p = static_cast<float>(r.uniform());
  const auto q = quantize8(img);
  EXPECT_EQ(quantize8(q), q);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(q.pixels[i], img.pixels[i], 0.5 / 255.0 + 1e-7);
}

TEST(Image, PngRoundTripIsExactOnQuantized) {
  s2r_test::TempDir dir("png");
  Rng r(4);
  for (int channels : {1, 3, 4}) {
    Image img(7, 5, channels);
    for (auto& p : img.pixels) p = static_cast<float>(r.uniform());
    const auto q = quantize8(img);
    const auto path = dir / ("img" + std::to_string(channels) + ".png");
    write_png(path, q);
    EXPECT_TRUE(looks_like_png(path));
    EXPECT_EQ(read_png(path), q);
  }
}

TEST(Image, NonPngDetected) {
  s2r_test::TempDir dir("nopng");
  std::ofstream(dir / "x.txt") << "hello";
  EXPECT_FALSE(looks_like_png(dir / "x.txt"));
  EXPECT_THROW(read_png(dir / "x.txt"), Error);
}

TEST(Image, ResizeIdentityAndShape) {
  Image img(8, 8, 3, 0.25f);
  EXPECT_EQ(resize_bilinear(img, 8, 8), img);
  const auto big = resize_bilinear(img, 16, 12);
  EXPECT_EQ(big.width, 16);
  EXPECT_EQ(big.height, 12);
  for (float p : big.pixels) EXPECT_NEAR(p, 0.25f, 1e-6);
}

TEST(Image, TileGridLayout) {
  std::vector<Image> tiles;
  for (int i = 0; i < 4; ++i) tiles.emplace_back(3, 2, 3, 0.1f * static_cast<float>(i + 1));
  const auto g = tile_grid(tiles, 2);
  EXPECT_EQ(g.width, 6);
  EXPECT_EQ(g.height, 4);
  EXPECT_FLOAT_EQ(g.at(0, 0, 0), 0.1f);
  EXPECT_FLOAT_EQ(g.at(3, 0, 0), 0.2f);
  EXPECT_FLOAT_EQ(g.at(0, 2, 0), 0.3f);
  EXPECT_FLOAT_EQ(g.at(5, 3, 2), 0.4f);
}

TEST(TensorImage, RoundTrip) {
  Image img(5, 4, 3);
  Rng r(6);
  for (auto& p : img.pixels) p = static_cast<float>(r.uniform());
  const auto t = to_tensor(img);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{3, 4, 5}));
  EXPECT_FLOAT_EQ(t[1][2][3].item<float>(), img.at(3, 2, 1));
  EXPECT_EQ(to_image(t), img);
  EXPECT_THROW(stack_images({img, Image(4, 4, 3)}), Error);
}

TEST(Checkpoint, SerializationIsBitExact) {
  Checkpoint c;
  c.meta["note"] = "x";
  c.put("b", torch::arange(6, torch::kFloat64).reshape({2, 3}));
  c.put("a", torch::randn({4}));
  const auto bytes = c.serialize();
  const auto back = Checkpoint::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.meta["note"], "x");
  EXPECT_TRUE(torch::equal(back.get("a"), c.get("a")));
  EXPECT_EQ(back.names(), (std::vector<std::string>{"a", "b"}));
}

TEST(Checkpoint, ModuleAndAdamRoundTrip) {
  torch::manual_seed(0);
  torch::nn::Linear lin(3, 2);
  torch::optim::Adam opt(lin->parameters(), torch::optim::AdamOptions(0.1));
  lin->forward(torch::randn({5, 3})).sum().backward();
  opt.step();

  Checkpoint c;
  c.put_module("lin", *lin);
  c.put_adam("adam", opt);
  auto back = Checkpoint::deserialize(c.serialize());

  torch::nn::Linear other(3, 2);
  torch::optim::Adam other_opt(other->parameters(), torch::optim::AdamOptions(0.1));
  back.load_module("lin", *other);
  back.load_adam("adam", other_opt);
  EXPECT_EQ(diffusion::checksum(*other), diffusion::checksum(*lin));

  auto x = torch::randn({5, 3});
  for (auto* o : {&opt, &other_opt}) o->zero_grad();
  lin->forward(x).sum().backward();
  other->forward(x).sum().backward();
  opt.step();
  other_opt.step();
  EXPECT_EQ(diffusion::checksum(*other), diffusion::checksum(*lin));
}

TEST(Checkpoint, RejectsGarbage) {
  try {
    Checkpoint::deserialize("not a checkpoint");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadCheckpoint);
  }
  Checkpoint c;
  EXPECT_THROW(c.get("missing"), Error);
}

TEST(Checkpoint, AtomicSaveLeavesNoTemp) {
  s2r_test::TempDir dir("ckpt");
  Checkpoint c;
  c.put("x", torch::ones({3}));
  c.save(dir / "a.ckpt");
  EXPECT_TRUE(fs::exists(dir / "a.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "a.ckpt.tmp"));
  EXPECT_EQ(Checkpoint::load(dir / "a.ckpt").serialize(), c.serialize());
}

TEST(StepLog, AppendsAndReadsBack) {
  s2r_test::TempDir dir("log");
  {
    StepLog log(dir / "log.jsonl");
    log.append({{"step", 0}, {"phase", "prompt"}});
    log.append({{"step", 1}, {"phase", "unet"}});
    EXPECT_EQ(log.phases(), (std::vector<std::string>{"prompt", "unet"}));
  }
  const auto recs = StepLog::read(dir / "log.jsonl");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[1]["phase"], "unet");
}

TEST(Errors, NamesAreStable) {
  EXPECT_EQ(errc_name(Errc::OutOfBounds), "OutOfBounds");
  EXPECT_EQ(errc_name(Errc::SizeMismatch), "SizeMismatch");
  Error e(Errc::BadRatios, "x");
  EXPECT_EQ(std::string(e.what()), "BadRatios: x");
}
