#include "seal2real/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "seal2real/error.hpp"
#include "seal2real/hash.hpp"
#include "seal2real/rng.hpp"
#include "seal2real/tensor_image.hpp"
#include "seal2real/train_util.hpp"

namespace seal2real::eval {

namespace nn = torch::nn;
namespace F = torch::nn::functional;
using dataset::Manifest;
using dataset::ManifestEntry;
using dataset::Split;
using synth::Provenance;
using Entries = std::vector<const ManifestEntry*>;

double miou(const torch::Tensor& pred, const torch::Tensor& truth) {
  require(pred.sizes() == truth.sizes(), Errc::ShapeMismatch, "prediction and truth differ in shape");
  auto p = pred.to(torch::kBool);
  auto g = truth.to(torch::kBool);
  double total = 0.0;
  for (int cls = 0; cls < 2; ++cls) {
    auto pc = cls == 1 ? p : p.logical_not();
    auto gc = cls == 1 ? g : g.logical_not();
    const double inter = pc.logical_and(gc).sum().item<double>();
    const double uni = pc.logical_or(gc).sum().item<double>();
    total += uni == 0.0 ? 1.0 : inter / uni;
  }
  return total / 2.0;
}

namespace {

bool has_split(const Manifest& m, Split s) {
  return std::any_of(m.entries.begin(), m.entries.end(), [&](const auto& e) { return e.split == s; });
}

Entries restrict_split(const Entries& in, const Manifest& m, Split s) {
  if (!has_split(m, s)) return in;
  Entries out;
  for (const auto* e : in)
    if (e->split == s) out.push_back(e);
  return out;
}

Entries labeled(const Manifest& m) {
  Entries out;
  for (const auto& e : m.entries)
    if (e.labeled()) out.push_back(&e);
  return out;
}

Entries fakes_of(const Manifest& m) {
  auto forged = m.select(Provenance::forged);
  return forged.empty() ? m.select(Provenance::synthetic) : forged;
}

// Deterministic holdout: entries ordered by a salted id hash, the last
// `fraction` held out. Independent of the run seed so every seed and
// condition shares one test set.
std::pair<Entries, Entries> holdout(Entries entries, double fraction) {
  std::sort(entries.begin(), entries.end(), [](const auto* a, const auto* b) {
    return fnv1a64("holdout:" + a->group()) < fnv1a64("holdout:" + b->group());
  });
  const auto n_test = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(entries.size())));
  const auto cut = entries.size() - std::min(n_test, entries.size());
  return {Entries(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(cut)),
          Entries(entries.begin() + static_cast<std::ptrdiff_t>(cut), entries.end())};
}

nn::Conv2d conv(int in, int out, int stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::Tensor up2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

class SegmenterImpl : public nn::Module {
 public:
  explicit SegmenterImpl(int c) {
    e0_ = register_module("e0", conv(3, c));
    e1_ = register_module("e1", conv(c, 2 * c, 2));
    m_ = register_module("m", conv(2 * c, 4 * c, 2));
    u1_ = register_module("u1", conv(4 * c + 2 * c, 2 * c));
    u0_ = register_module("u0", conv(2 * c + c, c));
    out_ = register_module("out", nn::Conv2d(nn::Conv2dOptions(c, 1, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto a = F::silu(e0_(x));
    auto b = F::silu(e1_(a));
    auto m = F::silu(m_(b));
    auto u = F::silu(u1_(torch::cat({up2(m), b}, 1)));
    u = F::silu(u0_(torch::cat({up2(u), a}, 1)));
    return out_(u);
  }

 private:
  nn::Conv2d e0_{nullptr}, e1_{nullptr}, m_{nullptr}, u1_{nullptr}, u0_{nullptr}, out_{nullptr};
};
TORCH_MODULE(Segmenter);

// Strided conv stack, global average pool, linear head.
class ClassifierImpl : public nn::Module {
 public:
  ClassifierImpl(int c, int outputs) {
    c1_ = register_module("c1", conv(3, c, 2));
    c2_ = register_module("c2", conv(c, 2 * c, 2));
    c3_ = register_module("c3", conv(2 * c, 2 * c, 2));
    fc_ = register_module("fc", nn::Linear(2 * c, outputs));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto h = F::silu(c3_(F::silu(c2_(F::silu(c1_(x))))));
    return fc_(h.mean({2, 3}));
  }

 private:
  nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
  nn::Linear fc_{nullptr};
};
TORCH_MODULE(Classifier);

// Strided convs, then a dense head over the whole strip predicts every slot.
class StripReaderImpl : public nn::Module {
 public:
  StripReaderImpl(int c, int height, int width, int slots, int classes) : slots_(slots), classes_(classes) {
    c1_ = register_module("c1", conv(3, c));
    c2_ = register_module("c2", conv(c, c, 2));
    c3_ = register_module("c3", conv(c, c, 2));
    const int h = (height + 3) / 4;
    const int w = (width + 3) / 4;
    fc1_ = register_module("fc1", nn::Linear(c * h * w, 128));
    fc2_ = register_module("fc2", nn::Linear(128, slots * classes));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto h = F::silu(c3_(F::silu(c2_(F::silu(c1_(x))))));
    h = F::silu(fc1_(h.flatten(1)));
    return fc2_(h).view({x.size(0), slots_, classes_});
  }

 private:
  int slots_, classes_;
  nn::Conv2d c1_{nullptr}, c2_{nullptr}, c3_{nullptr};
  nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(StripReader);

template <typename Model, typename LossFn>
void fit(Model& model, int steps, int batch, double lr, std::int64_t n, Rng& rng, LossFn&& loss_fn) {
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(lr));
  model->train();
  for (int s = 0; s < steps; ++s) {
    std::vector<int64_t> idx;
    for (int i = 0; i < batch; ++i) idx.push_back(rng.uniform_int(0, n - 1));
    auto index = torch::tensor(idx, torch::kInt64);
    opt.zero_grad();
    auto loss = loss_fn(index);
    loss.backward();
    opt.step();
  }
  model->eval();
}

std::string read_label(const ManifestEntry& e) {
  if (e.text) return *e.text;
  fail(Errc::MissingLabels, "entry '" + e.id + "' has no text label");
}

void seed_torch(std::uint64_t seed, std::uint64_t salt) {
  torch::manual_seed(mix_seed(seed, salt));
}

}  // namespace

Entries training_entries(const Manifest& m) {
  Entries pool = m.select(Provenance::forged);
  if (pool.empty()) pool = m.select(Provenance::synthetic);
  if (pool.empty()) pool = labeled(m);
  return restrict_split(pool, m, Split::train);
}

namespace {

// Training population of one comparison condition, falling back to
// training_entries when the preferred provenance is absent.
Entries population(const Manifest& m, Provenance preferred) {
  Entries pool = m.select(preferred);
  return pool.empty() ? training_entries(m) : restrict_split(pool, m, Split::train);
}

}  // namespace

Entries test_entries(const Manifest& m) { return restrict_split(labeled(m), m, Split::test); }

// ---------------------------------------------------------------------------
// Segmentation

namespace {

double segmentation_on(const Manifest& train_m, const Entries& train, const Manifest& test_m, const Entries& test,
                       const EvalConfig& cfg, std::uint64_t seed) {
  require(!train.empty() && !test.empty(), Errc::MissingLabels, "segmentation needs labeled train and test entries");
  for (const auto* e : train) require(e->labeled(), Errc::MissingLabels, "training entry '" + e->id + "' has no mask");
  for (const auto* e : test) require(e->labeled(), Errc::MissingLabels, "test entry '" + e->id + "' has no mask");
  auto truth = dataset::load_masks(test_m, test, cfg.image_size);
  if (cfg.oracle) return miou(truth, truth);

  auto x = dataset::load_images(train_m, train, cfg.image_size);
  auto y = dataset::load_masks(train_m, train, cfg.image_size);
  seed_torch(seed, 0x5e6);
  Segmenter model(cfg.seg_channels);
  Rng rng(mix_seed(seed, 0x5e7));
  fit(model, cfg.seg_steps, cfg.seg_batch, cfg.seg_lr, x.size(0), rng, [&](const torch::Tensor& idx) {
    return F::binary_cross_entropy_with_logits(model->forward(x.index_select(0, idx)), y.index_select(0, idx));
  });

  torch::NoGradGuard guard;
  auto xt = dataset::load_images(test_m, test, cfg.image_size);
  auto pred = model->forward(xt) > 0;
  return miou(pred, truth);
}

}  // namespace

double eval_segmentation(const Manifest& train, const Manifest& test, const EvalConfig& cfg, std::uint64_t seed) {
  return segmentation_on(train, training_entries(train), test, test_entries(test), cfg, seed);
}

// ---------------------------------------------------------------------------
// Identification

namespace {

struct Labeled {
  const Manifest* manifest;
  Entries entries;
};

double identification_on(const std::vector<Labeled>& train_real, const std::vector<Labeled>& train_fake,
                         const std::vector<Labeled>& test_real, const std::vector<Labeled>& test_fake,
                         const EvalConfig& cfg, std::uint64_t seed) {
  auto gather = [&](const std::vector<Labeled>& parts) {
    std::vector<torch::Tensor> xs;
    for (const auto& p : parts)
      if (!p.entries.empty()) xs.push_back(dataset::load_images(*p.manifest, p.entries, cfg.image_size));
    return xs.empty() ? torch::Tensor() : torch::cat(xs);
  };
  auto tr_r = gather(train_real), tr_f = gather(train_fake), te_r = gather(test_real), te_f = gather(test_fake);
  require(tr_r.defined() && tr_f.defined() && te_r.defined() && te_f.defined(), Errc::ClassMissing,
          "identification needs real and fake images in both train and test parts");
  if (cfg.oracle) return 1.0;

  auto x = torch::cat({tr_r, tr_f});
  auto y = torch::cat({torch::ones({tr_r.size(0)}), torch::zeros({tr_f.size(0)})});
  Rng rng(mix_seed(seed, 0x1d));
  if (cfg.shuffle_labels) {
    std::vector<int64_t> perm(static_cast<std::size_t>(y.size(0)));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int64_t>(i);
    for (std::size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
    y = y.index_select(0, torch::tensor(perm, torch::kInt64));
  }
  // Class-balanced sampling: draw half of each batch from each class index range.
  const int64_t n_real = tr_r.size(0);
  const int64_t n_all = x.size(0);
  seed_torch(seed, 0x1e);
  Classifier model(cfg.id_channels, 1);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.id_lr));
  model->train();
  for (int s = 0; s < cfg.id_steps; ++s) {
    std::vector<int64_t> idx;
    for (int i = 0; i < cfg.id_batch; ++i)
      idx.push_back(i % 2 == 0 ? rng.uniform_int(0, n_real - 1) : rng.uniform_int(n_real, n_all - 1));
    auto index = torch::tensor(idx, torch::kInt64);
    opt.zero_grad();
    auto loss = F::binary_cross_entropy_with_logits(model->forward(x.index_select(0, index)).squeeze(1),
                                                    y.index_select(0, index));
    loss.backward();
    opt.step();
  }
  model->eval();

  torch::NoGradGuard guard;
  const double acc_real = (model->forward(te_r).squeeze(1) > 0).to(torch::kFloat64).mean().item<double>();
  const double acc_fake = (model->forward(te_f).squeeze(1) <= 0).to(torch::kFloat64).mean().item<double>();
  return 0.5 * (acc_real + acc_fake);
}

}  // namespace

double eval_identification(const Manifest& real, const Manifest& fake, const EvalConfig& cfg, std::uint64_t seed) {
  auto reals = real.select(Provenance::real);
  auto fakes = fakes_of(fake);
  require(!reals.empty(), Errc::ClassMissing, "no real entries");
  require(!fakes.empty(), Errc::ClassMissing, "no fake entries");
  auto [r_train, r_test] = holdout(reals, cfg.id_holdout);
  auto [f_train, f_test] = holdout(fakes, cfg.id_holdout);
  return identification_on({{&real, r_train}}, {{&fake, f_train}}, {{&real, r_test}}, {{&fake, f_test}}, cfg, seed);
}

// ---------------------------------------------------------------------------
// Recognition

torch::Tensor polar_strips(const Manifest& m, const Entries& entries, const EvalConfig& cfg) {
  const int H = cfg.rec_strip_height;
  const int W = cfg.rec_strip_width;
  std::vector<torch::Tensor> strips;
  for (const auto* e : entries) {
    require(e->bbox.has_value(), Errc::MissingLabels, "entry '" + e->id + "' has no box");
    Image im = read_png(m.resolve(e->paths.stamped));
    require(im.channels >= 3, Errc::ShapeMismatch, "expected an RGB image");
    auto img = to_tensor(im).slice(0, 0, 3).unsqueeze(0);
    const auto& b = *e->bbox;
    const double cx = 0.5 * (b.x0 + b.x1);
    const double cy = 0.5 * (b.y0 + b.y1);
    const double r = 0.5 * std::max(b.width(), b.height());
    auto grid = torch::empty({1, H, W, 2}, torch::kFloat32);
    auto g = grid.accessor<float, 4>();
    for (int row = 0; row < H; ++row) {
      // Row 0 is the outer edge so glyph tops point up in the strip.
      const double rho = r * (1.0 - (1.0 - cfg.rec_inner_ratio) * (row + 0.5) / H);
      for (int col = 0; col < W; ++col) {
        const double a = (-cfg.rec_arc_deg / 2.0 + cfg.rec_arc_deg * (col + 0.5) / W) * std::numbers::pi / 180.0;
        const double x = cx + rho * std::sin(a);
        const double y = cy - rho * std::cos(a);
        g[0][row][col][0] = static_cast<float>(2.0 * x / im.width - 1.0);
        g[0][row][col][1] = static_cast<float>(2.0 * y / im.height - 1.0);
      }
    }
    strips.push_back(F::grid_sample(img, grid,
                                    F::GridSampleFuncOptions().mode(torch::kBilinear).padding_mode(torch::kBorder).align_corners(false)));
  }
  require(!strips.empty(), Errc::MissingLabels, "no entries to unwrap");
  return torch::cat(strips);
}

namespace {

double recognition_on(const Manifest& train_m, const Entries& train, const Manifest& test_m, const Entries& test,
                      const EvalConfig& cfg, std::uint64_t seed) {
  require(!train.empty() && !test.empty(), Errc::MissingLabels, "recognition needs labeled train and test entries");
  std::vector<std::string> train_text, test_text;
  for (const auto* e : train) train_text.push_back(read_label(*e));
  for (const auto* e : test) test_text.push_back(read_label(*e));

  std::size_t slots = 0;
  std::set<char> chars;
  for (const auto& t : train_text) {
    slots = std::max(slots, t.size());
    chars.insert(t.begin(), t.end());
  }
  require(slots > 0, Errc::MissingLabels, "training legends are empty");
  constexpr char kPad = '\0';
  chars.insert(kPad);
  std::vector<char> alphabet(chars.begin(), chars.end());
  std::map<char, int64_t> code;
  for (std::size_t i = 0; i < alphabet.size(); ++i) code[alphabet[i]] = static_cast<int64_t>(i);

  auto encode = [&](const std::vector<std::string>& texts) {
    auto out = torch::full({static_cast<int64_t>(texts.size()), static_cast<int64_t>(slots)}, -1, torch::kInt64);
    auto a = out.accessor<int64_t, 2>();
    for (std::size_t i = 0; i < texts.size(); ++i)
      for (std::size_t s = 0; s < slots; ++s) {
        const char ch = s < texts[i].size() ? texts[i][s] : kPad;
        const auto it = code.find(ch);
        a[static_cast<int64_t>(i)][static_cast<int64_t>(s)] = it == code.end() ? -1 : it->second;
      }
    return out;
  };
  auto y_test = encode(test_text);
  if (cfg.oracle) return 1.0;

  auto y = encode(train_text);
  auto x = polar_strips(train_m, train, cfg);
  const int classes = static_cast<int>(alphabet.size());
  seed_torch(seed, 0x7ec);
  StripReader model(cfg.rec_channels, cfg.rec_strip_height, cfg.rec_strip_width, static_cast<int>(slots), classes);
  Rng rng(mix_seed(seed, 0x7ed));
  fit(model, cfg.rec_steps, cfg.rec_batch, cfg.rec_lr, x.size(0), rng, [&](const torch::Tensor& idx) {
    auto logits = model->forward(x.index_select(0, idx));
    return F::cross_entropy(logits.reshape({-1, classes}), y.index_select(0, idx).reshape({-1}));
  });

  torch::NoGradGuard guard;
  auto pred = model->forward(polar_strips(test_m, test, cfg)).argmax(2);
  // Test characters unseen in training are encoded as -1 and never match.
  return (pred == y_test).to(torch::kFloat64).mean().item<double>();
}

}  // namespace

double eval_recognition(const Manifest& train, const Manifest& test, const EvalConfig& cfg, std::uint64_t seed) {
  return recognition_on(train, training_entries(train), test, test_entries(test), cfg, seed);
}

// ---------------------------------------------------------------------------
// Comparison report

double median(std::vector<double> values) {
  require(!values.empty(), Errc::EmptyDataset, "median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const CellResult* EvalReport::find(std::string_view condition, std::string_view task) const {
  for (const auto& c : cells)
    if (c.condition == condition && c.task == task) return &c;
  return nullptr;
}

std::string EvalReport::to_jsonl() const {
  using json = nlohmann::ordered_json;
  std::ostringstream out;
  json header;
  header["record"] = "header";
  header["seeds"] = seeds;
  header["reference"] = {
      {"segmentation_miou_pct", {reference.segmentation[0], reference.segmentation[1]}},
      {"identification_acc_pct", {reference.identification[0], reference.identification[1]}},
      {"recognition_acc_pct", {reference.recognition[0], reference.recognition[1]}},
      {"verified", false}};
  json scores = json::object();
  for (int i = 0; i < 5; ++i) scores[reference.user_study_sources[i]] = reference.user_study_scores[i];
  header["user_study_reference"] = scores;
  header["notes"] = notes;
  out << header.dump() << '\n';
  for (const auto& c : cells) {
    json j;
    j["record"] = "cell";
    j["condition"] = c.condition;
    j["task"] = c.task;
    j["metric"] = c.task == std::string("segmentation") ? "miou" : "accuracy";
    j["per_seed"] = c.per_seed;
    j["median"] = c.median;
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-12s | %-22s | %-22s | %-22s\n", "dataset", "segmentation MIoU %",
                "identification acc %", "recognition acc %");
  out << line << std::string(88, '-') << '\n';
  const double* refs[3] = {reference.segmentation, reference.identification, reference.recognition};
  for (int d = 0; d < 2; ++d) {
    std::string cols[3];
    for (int t = 0; t < 3; ++t) {
      const auto* c = find(kConditions[d], kTasks[t]);
      char buf[64];
      if (c == nullptr) {
        std::snprintf(buf, sizeof buf, "%8s (ref %6.2f)", "-", refs[t][d]);
      } else {
        std::snprintf(buf, sizeof buf, "%8.2f (ref %6.2f)", 100.0 * c->median, refs[t][d]);
      }
      cols[t] = buf;
    }
    std::snprintf(line, sizeof line, "%-12s | %-22s | %-22s | %-22s\n", kConditions[d], cols[0].c_str(),
                  cols[1].c_str(), cols[2].c_str());
    out << line;
  }
  out << "medians over " << seeds.size() << " seed(s); reference numbers are published full-scale results, not "
      << "reproduced here\n";
  return out.str();
}

EvalReport compare_datasets(const Manifest& traditional, const Manifest& realized, const Manifest& evaluation,
                            const EvalConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  require(!seeds.empty(), Errc::InvalidConfig, "at least one seed is required");
  const Manifest* train_m[2] = {&traditional, &realized};
  const Entries train[2] = {population(traditional, Provenance::synthetic), population(realized, Provenance::forged)};
  require(train[0].size() == train[1].size(), Errc::SizeMismatch,
          "training sets differ in size (" + std::to_string(train[0].size()) + " vs " +
              std::to_string(train[1].size()) + ")");
  require(!train[0].empty(), Errc::EmptyDataset, "training sets are empty");

  // Evaluation reals: the test split scores every task; the train split (or a
  // fixed holdout when unsplit) supplies real examples for identification.
  Entries eval_all = evaluation.select(Provenance::real);
  require(!eval_all.empty(), Errc::ClassMissing, "evaluation manifest has no real entries");
  Entries eval_train, eval_test;
  if (has_split(evaluation, Split::test)) {
    eval_test = restrict_split(eval_all, evaluation, Split::test);
    for (const auto* e : eval_all)
      if (e->split != Split::test) eval_train.push_back(e);
  } else {
    std::tie(eval_train, eval_test) = holdout(eval_all, 0.5);
  }

  std::pair<Entries, Entries> fake_parts[2] = {holdout(train[0], cfg.id_holdout), holdout(train[1], cfg.id_holdout)};

  EvalReport report;
  report.seeds = seeds;
  report.notes = {"recognition is fixed-slot legend classification on a polar-unwrapped seal ring",
                  "identification accuracy is class-balanced; test fakes pool held-out traditional and realized samples",
                  "reference numbers are recorded for comparison only"};
  for (int d = 0; d < 2; ++d) {
    for (int t = 0; t < 3; ++t) {
      const bool enabled = t == 0 ? cfg.run_segmentation : (t == 1 ? cfg.run_identification : cfg.run_recognition);
      if (!enabled) continue;
      CellResult cell;
      cell.condition = kConditions[d];
      cell.task = kTasks[t];
      for (auto seed : seeds) {
        double v = 0.0;
        if (t == 0) {
          v = segmentation_on(*train_m[d], train[d], evaluation, eval_test, cfg, seed);
        } else if (t == 1) {
          v = identification_on({{&evaluation, eval_train}}, {{train_m[d], fake_parts[d].first}},
                                {{&evaluation, eval_test}},
                                {{train_m[0], fake_parts[0].second}, {train_m[1], fake_parts[1].second}}, cfg, seed);
        } else {
          v = recognition_on(*train_m[d], train[d], evaluation, eval_test, cfg, seed);
        }
        require(std::isfinite(v) && v >= 0.0 && v <= 1.0, Errc::InvalidConfig, "metric out of range");
        cell.per_seed.push_back(v);
      }
      cell.median = median(cell.per_seed);
      report.cells.push_back(cell);
    }
  }
  return report;
}

}  // namespace seal2real::eval
