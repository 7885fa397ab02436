#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "seal2real/forger.hpp"
#include "seal2real/image.hpp"
#include "seal2real/seal_synth.hpp"

namespace seal2real::dataset {

inline constexpr int kSchemaVersion = 1;
inline constexpr std::string_view kManifestName = "manifest.jsonl";

enum class Split { none, train, val, test };
std::string_view to_string(Split s) noexcept;
Split split_from_string(std::string_view s);

/// Artifact paths, relative to the manifest's directory.
struct EntryPaths {
  std::string stamped;
  std::optional<std::string> mask;
  std::optional<std::string> clean;
  std::optional<std::string> label;
};

struct ManifestEntry {
  std::string id;
  synth::Provenance provenance = synth::Provenance::synthetic;
  EntryPaths paths;
  std::optional<std::string> text;
  std::optional<Rect> bbox;
  Split split = Split::none;

  bool labeled() const { return paths.mask.has_value(); }
  /// Sibling key shared by a synthetic sample and its forged version.
  std::string group() const;
};

/// Training manifests follow the unpaired-real rule (real entries carry no
/// labels). Evaluation manifests may attach labels to real entries so
/// held-out real-style test data can be scored.
enum class Purpose { training, evaluation };

struct Manifest {
  int schema_version = kSchemaVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
  Purpose purpose = Purpose::training;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::size_t count(synth::Provenance p, Split s = Split::none) const;
  std::vector<const ManifestEntry*> select(synth::Provenance p, Split s = Split::none) const;
};

/// Structural checks: unique ids, label presence per provenance and purpose.
/// Throws InvalidConfig.
void validate(const Manifest& m);

/// Every referenced file exists and decodes. Throws IoFailure.
void check_files(const Manifest& m);

/// One JSON header line followed by one line per entry, fixed key order.
std::string serialize(const Manifest& m);
Manifest parse(const std::string& text, const std::filesystem::path& root);
/// Atomic write (temp file + rename).
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Stable hash of a generator configuration.
std::string config_hash(const synth::SynthConfig& cfg);

/// Synthetic samples with labels, plus a forged sibling per sample when a
/// forger is given. Forged images keep the synthetic pixels outside the seal
/// mask, so both siblings share mask, clean page and text byte-for-byte.
/// The manifest is written last. Throws InvalidConfig, IoFailure.
Manifest generate_paired(int n, const synth::SynthConfig& cfg, stage2::ForgerNet* forger,
                         const std::filesystem::path& out_dir, std::uint64_t seed);

/// Real-style samples from a held-out appearance law. With
/// purpose == training the labels are dropped; with evaluation they are kept.
Manifest generate_real_proxy(int n, const synth::SynthConfig& cfg, Purpose purpose,
                             const std::filesystem::path& out_dir, std::uint64_t seed);

/// One unlabeled real entry per readable PNG in `dir`; other files are skipped
/// with a warning. Throws EmptyDirectory.
Manifest ingest_real(const std::filesystem::path& dir, const std::filesystem::path& out_manifest,
                     std::vector<std::string>* warnings = nullptr);

/// Deterministic shuffled train/val/test assignment by sibling group.
/// Throws BadRatios.
Manifest split(const Manifest& m, const std::array<double, 3>& ratios, std::uint64_t seed);

/// Replaces pixels outside `mask` with `clean`.
Image paste_outside_mask(const Image& forged, const Image& mask, const Image& clean);

// Tensor loading. Images are resized to size x size when needed.
torch::Tensor load_images(const Manifest& m, const std::vector<const ManifestEntry*>& entries, int size);
torch::Tensor load_masks(const Manifest& m, const std::vector<const ManifestEntry*>& entries, int size);

}  // namespace seal2real::dataset
