#include "seal2real/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "config_json.hpp"
#include "seal2real/checkpoint.hpp"
#include "seal2real/error.hpp"
#include "seal2real/hash.hpp"
#include "seal2real/tensor_image.hpp"

namespace seal2real::dataset {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using synth::Provenance;

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::none: return "none";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "none";
}

Split split_from_string(std::string_view s) {
  if (s == "none") return Split::none;
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  fail(Errc::InvalidConfig, "unknown split '" + std::string(s) + "'");
}

namespace {

std::string_view to_string(Purpose p) { return p == Purpose::training ? "training" : "evaluation"; }

Purpose purpose_from_string(const std::string& s) {
  if (s == "training") return Purpose::training;
  if (s == "evaluation") return Purpose::evaluation;
  fail(Errc::InvalidConfig, "unknown manifest purpose '" + s + "'");
}

std::string sample_key(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", i);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoFailure, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::IoFailure, "short write to " + path.string());
}

void make_dirs(const fs::path& out_dir) {
  std::error_code ec;
  for (const char* sub : {"images", "masks", "clean", "labels"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) fail(Errc::IoFailure, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
}

Image mask_to_png(const Image& mask) {
  Image out = mask;
  for (auto& v : out.pixels) v = v > 0.5f ? 1.0f : 0.0f;
  return out;
}

// Writes the labeled artifacts shared by siblings and the stamped image.
EntryPaths write_labeled(const fs::path& out_dir, const std::string& key, const std::string& stamped_name,
                         const synth::LabeledSample& s) {
  EntryPaths p;
  p.stamped = "images/" + stamped_name + ".png";
  p.mask = "masks/" + key + ".png";
  p.clean = "clean/" + key + ".png";
  p.label = "labels/" + key + ".txt";
  write_png(out_dir / p.stamped, s.stamped);
  write_png(out_dir / *p.mask, mask_to_png(s.mask));
  write_png(out_dir / *p.clean, s.clean_doc);
  write_text(out_dir / *p.label, s.text + "\n");
  return p;
}

}  // namespace

std::string ManifestEntry::group() const {
  const auto dash = id.find('-');
  return dash == std::string::npos ? id : id.substr(0, dash);
}

std::size_t Manifest::count(Provenance p, Split s) const { return select(p, s).size(); }

std::vector<const ManifestEntry*> Manifest::select(Provenance p, Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.provenance == p && (s == Split::none || e.split == s)) out.push_back(&e);
  return out;
}

void validate(const Manifest& m) {
  std::set<std::string> ids;
  for (const auto& e : m.entries) {
    require(!e.id.empty(), Errc::InvalidConfig, "manifest entry without id");
    require(ids.insert(e.id).second, Errc::InvalidConfig, "duplicate manifest id '" + e.id + "'");
    require(!e.paths.stamped.empty(), Errc::InvalidConfig, "entry '" + e.id + "' has no stamped image");
    const bool full = e.paths.mask && e.paths.clean && e.text && e.bbox;
    const bool none = !e.paths.mask && !e.paths.clean && !e.paths.label && !e.text && !e.bbox;
    if (e.provenance != Provenance::real) {
      require(full, Errc::InvalidConfig, "paired entry '" + e.id + "' lacks labels");
    } else if (m.purpose == Purpose::training) {
      require(none, Errc::InvalidConfig, "real entry '" + e.id + "' carries labels in a training manifest");
    } else {
      require(full || none, Errc::InvalidConfig, "real entry '" + e.id + "' has partial labels");
    }
  }
}

void check_files(const Manifest& m) {
  auto check_png = [&](const std::string& rel) {
    const auto path = m.resolve(rel);
    require(fs::exists(path), Errc::IoFailure, "missing artifact " + path.string());
    (void)read_png(path);
  };
  for (const auto& e : m.entries) {
    check_png(e.paths.stamped);
    if (e.paths.mask) check_png(*e.paths.mask);
    if (e.paths.clean) check_png(*e.paths.clean);
    if (e.paths.label) require(fs::exists(m.resolve(*e.paths.label)), Errc::IoFailure, "missing label for " + e.id);
  }
}

std::string serialize(const Manifest& m) {
  std::ostringstream out;
  json header;
  header["schema_version"] = m.schema_version;
  header["config_hash"] = m.config_hash;
  header["seed"] = m.seed;
  header["purpose"] = to_string(m.purpose);
  header["entries"] = m.entries.size();
  out << header.dump() << '\n';
  for (const auto& e : m.entries) {
    json j;
    j["id"] = e.id;
    j["provenance"] = synth::to_string(e.provenance);
    json paths;
    paths["stamped"] = e.paths.stamped;
    if (e.paths.mask) paths["mask"] = *e.paths.mask;
    if (e.paths.clean) paths["clean"] = *e.paths.clean;
    if (e.paths.label) paths["label"] = *e.paths.label;
    j["paths"] = paths;
    if (e.text) j["text"] = *e.text;
    if (e.bbox) j["bbox"] = {e.bbox->x0, e.bbox->y0, e.bbox->x1, e.bbox->y1};
    j["split"] = to_string(e.split);
    out << j.dump() << '\n';
  }
  return out.str();
}

Manifest parse(const std::string& text, const fs::path& root) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), Errc::InvalidConfig, "empty manifest");
  Manifest m;
  m.root = root;
  try {
    const auto header = json::parse(line);
    m.schema_version = header.at("schema_version").get<int>();
    require(m.schema_version == kSchemaVersion, Errc::InvalidConfig, "unsupported manifest schema version");
    m.config_hash = header.at("config_hash").get<std::string>();
    m.seed = header.at("seed").get<std::uint64_t>();
    m.purpose = purpose_from_string(header.at("purpose").get<std::string>());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.provenance = synth::provenance_from_string(j.at("provenance").get<std::string>());
      const auto& p = j.at("paths");
      e.paths.stamped = p.at("stamped").get<std::string>();
      if (p.contains("mask")) e.paths.mask = p.at("mask").get<std::string>();
      if (p.contains("clean")) e.paths.clean = p.at("clean").get<std::string>();
      if (p.contains("label")) e.paths.label = p.at("label").get<std::string>();
      if (j.contains("text")) e.text = j.at("text").get<std::string>();
      if (j.contains("bbox")) {
        const auto& b = j.at("bbox");
        e.bbox = Rect{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
      }
      e.split = split_from_string(j.value("split", "none"));
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(Errc::InvalidConfig, std::string("malformed manifest: ") + ex.what());
  }
  validate(m);
  return m;
}

void write_manifest(const fs::path& path, const Manifest& m) {
  validate(m);
  write_file_atomic(path, serialize(m));
}

Manifest read_manifest(const fs::path& path) { return parse(read_file(path), path.parent_path()); }

std::string config_hash(const synth::SynthConfig& cfg) {
  return hex64(fnv1a64(nlohmann::json(cfg).dump()));
}

Image paste_outside_mask(const Image& forged, const Image& mask, const Image& clean) {
  require(forged.same_shape(clean) && mask.width == clean.width && mask.height == clean.height && mask.channels == 1,
          Errc::ShapeMismatch, "forged image, mask and clean page must align");
  Image out = forged;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      if (mask.at(x, y, 0) <= 0.5f)
        for (int c = 0; c < out.channels; ++c) out.at(x, y, c) = clean.at(x, y, c);
  return out;
}

Manifest generate_paired(int n, const synth::SynthConfig& cfg, stage2::ForgerNet* forger, const fs::path& out_dir,
                         std::uint64_t seed) {
  require(n >= 1, Errc::InvalidConfig, "sample count must be positive");
  cfg.validate();
  if (forger != nullptr) {
    require(!forger->is_empty(), Errc::InvalidConfig, "forger is not initialized");
    require((*forger)->config().image_size == cfg.doc_width && cfg.doc_width == cfg.doc_height, Errc::InvalidConfig,
            "forger image size differs from the document size");
  }
  make_dirs(out_dir);

  Manifest m;
  m.seed = seed;
  std::string hash_input = config_hash(cfg);
  if (forger != nullptr) hash_input += ":" + hex64(diffusion::checksum(**forger));
  m.config_hash = hex64(fnv1a64(hash_input));

  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    auto sample = synth::synthesize_sample(rng, cfg);
    const auto key = sample_key(i);
    ManifestEntry syn;
    syn.id = key + "-syn";
    syn.provenance = Provenance::synthetic;
    syn.paths = write_labeled(out_dir, key, syn.id, sample);
    syn.text = sample.text;
    syn.bbox = sample.bbox;
    m.entries.push_back(syn);

    if (forger != nullptr) {
      // Quantize first so the paste-back reproduces the stored clean page.
      const Image stamped8 = quantize8(sample.stamped);
      const Image clean8 = quantize8(sample.clean_doc);
      const Image forged = paste_outside_mask(stage2::forge(*forger, stamped8), sample.mask, clean8);
      ManifestEntry fe = syn;
      fe.id = key + "-forged";
      fe.provenance = Provenance::forged;
      fe.paths.stamped = "images/" + fe.id + ".png";
      write_png(out_dir / fe.paths.stamped, forged);
      m.entries.push_back(fe);
    }
  }
  write_manifest(out_dir / kManifestName, m);
  m.root = out_dir;
  return m;
}

Manifest generate_real_proxy(int n, const synth::SynthConfig& cfg, Purpose purpose, const fs::path& out_dir,
                             std::uint64_t seed) {
  require(n >= 1, Errc::InvalidConfig, "sample count must be positive");
  cfg.validate();
  make_dirs(out_dir);
  Manifest m;
  m.seed = seed;
  m.purpose = purpose;
  m.config_hash = config_hash(cfg);
  for (int i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    auto sample = synth::synthesize_real_proxy(rng, cfg);
    const auto key = sample_key(i);
    ManifestEntry e;
    e.id = key + "-real";
    e.provenance = Provenance::real;
    if (purpose == Purpose::evaluation) {
      e.paths = write_labeled(out_dir, key, e.id, sample);
      e.text = sample.text;
      e.bbox = sample.bbox;
    } else {
      e.paths.stamped = "images/" + e.id + ".png";
      write_png(out_dir / e.paths.stamped, sample.stamped);
    }
    m.entries.push_back(e);
  }
  write_manifest(out_dir / kManifestName, m);
  m.root = out_dir;
  return m;
}

Manifest ingest_real(const fs::path& dir, const fs::path& out_manifest, std::vector<std::string>* warnings) {
  require(fs::is_directory(dir), Errc::EmptyDirectory, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(dir))
    if (de.is_regular_file()) files.push_back(de.path());
  require(!files.empty(), Errc::EmptyDirectory, "no files in " + dir.string());
  std::sort(files.begin(), files.end());

  const fs::path root = out_manifest.has_parent_path() ? out_manifest.parent_path() : fs::path(".");
  Manifest m;
  m.config_hash = hex64(fnv1a64(fs::absolute(dir).lexically_normal().string()));
  int index = 0;
  for (const auto& f : files) {
    std::string problem;
    if (!looks_like_png(f)) {
      problem = "not a PNG image";
    } else {
      try {
        (void)read_png(f);
      } catch (const Error& ex) {
        problem = ex.what();
      }
    }
    if (!problem.empty()) {
      const auto msg = "skipping " + f.string() + ": " + problem;
      std::fprintf(stderr, "warning: %s\n", msg.c_str());
      if (warnings != nullptr) warnings->push_back(msg);
      continue;
    }
    ManifestEntry e;
    e.id = sample_key(index++) + "-real";
    e.provenance = Provenance::real;
    e.paths.stamped = fs::proximate(f, root).generic_string();
    m.entries.push_back(e);
  }
  write_manifest(out_manifest, m);
  m.root = root;
  return m;
}

Manifest split(const Manifest& m, const std::array<double, 3>& ratios, std::uint64_t seed) {
  for (double r : ratios) require(r > 0.0 && std::isfinite(r), Errc::BadRatios, "split ratios must be positive");
  require(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) <= 1e-9, Errc::BadRatios, "split ratios must sum to 1");

  std::vector<std::string> groups;
  std::set<std::string> seen;
  for (const auto& e : m.entries)
    if (seen.insert(e.group()).second) groups.push_back(e.group());
  std::sort(groups.begin(), groups.end());
  Rng rng(mix_seed(seed, 0x5b1));
  for (std::size_t i = groups.size(); i > 1; --i)
    std::swap(groups[i - 1], groups[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

  const auto g = static_cast<double>(groups.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * g));
  const auto n_val = std::min(groups.size() - n_train, static_cast<std::size_t>(std::llround(ratios[1] * g)));
  std::map<std::string, Split> assign;
  for (std::size_t i = 0; i < groups.size(); ++i)
    assign[groups[i]] = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);

  Manifest out = m;
  for (auto& e : out.entries) e.split = assign.at(e.group());
  return out;
}

torch::Tensor load_images(const Manifest& m, const std::vector<const ManifestEntry*>& entries, int size) {
  require(!entries.empty(), Errc::EmptyDataset, "no entries to load");
  std::vector<Image> images;
  images.reserve(entries.size());
  for (const auto* e : entries) {
    Image im = read_png(m.resolve(e->paths.stamped));
    require(im.channels >= 3, Errc::ShapeMismatch, "expected an RGB image: " + e->paths.stamped);
    if (im.channels == 4) {
      Image rgb(im.width, im.height, 3);
      for (int y = 0; y < im.height; ++y)
        for (int x = 0; x < im.width; ++x)
          for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = im.at(x, y, c);
      im = std::move(rgb);
    }
    images.push_back(resize_bilinear(im, size, size));
  }
  return stack_images(images);
}

torch::Tensor load_masks(const Manifest& m, const std::vector<const ManifestEntry*>& entries, int size) {
  require(!entries.empty(), Errc::EmptyDataset, "no entries to load");
  std::vector<Image> masks;
  for (const auto* e : entries) {
    require(e->paths.mask.has_value(), Errc::MissingLabels, "entry '" + e->id + "' has no mask");
    Image mk = read_png(m.resolve(*e->paths.mask));
    require(mk.channels == 1, Errc::ShapeMismatch, "mask must be single-channel");
    if (mk.width != size || mk.height != size) mk = resize_bilinear(mk, size, size);
    for (auto& v : mk.pixels) v = v > 0.5f ? 1.0f : 0.0f;
    masks.push_back(std::move(mk));
  }
  return stack_images(masks);
}

}  // namespace seal2real::dataset
