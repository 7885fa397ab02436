#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "seal2real/image.hpp"
#include "seal2real/rng.hpp"

namespace seal2real::synth {

/// Geometric perturbation applied to a rendered stamp.
struct WarpParams {
  double rotation_deg = 0.0;
  double shear = 0.0;              // [-0.2, 0.2]
  double radial_distortion = 0.0;  // [-0.1, 0.1]

  static constexpr double kMaxShear = 0.2;
  static constexpr double kMaxRadial = 0.1;

  /// Throws WarpOutOfBounds.
  static WarpParams make(double rotation_deg, double shear, double radial_distortion);
  void validate() const;
  bool is_identity() const { return rotation_deg == 0.0 && shear == 0.0 && radial_distortion == 0.0; }
  friend bool operator==(const WarpParams&, const WarpParams&) = default;
};

/// Parametric description of one circular seal. Position is `center_x/y`,
/// size is `outer_radius`, legend is `text`.
struct SealSpec {
  std::string text;
  int center_x = 0;
  int center_y = 0;
  double outer_radius = 24.0;
  double ring_width = 2.5;
  double glyph_height = 7.0;
  double arc_span_deg = 240.0;
  double star_scale = 0.0;  // fraction of outer_radius, 0 = no star
  std::array<double, 3> ink_rgb{0.78, 0.08, 0.10};
  double base_opacity = 0.9;
  std::uint64_t texture_seed = 0;
  double texture_strength = 0.2;  // ink thinning amplitude in [0, 1)
  double texture_cell = 6.0;      // px, spatial scale of the ink texture
  WarpParams warp;

  /// Throws InvalidRange when an invariant fails.
  void validate() const;
  friend bool operator==(const SealSpec&, const SealSpec&) = default;
};

struct SealStamp {
  Image raster;  // RGBA; alpha = ink coverage, RGB = ink colour
  SealSpec spec;
  Rect tight_bbox;  // raster coordinates of alpha > 0

  /// Raster pixel (0, 0) lands on document pixel (origin_x, origin_y).
  int origin_x() const { return spec.center_x - raster.width / 2; }
  int origin_y() const { return spec.center_y - raster.height / 2; }
};

enum class Provenance { synthetic, forged, real };

std::string_view to_string(Provenance p) noexcept;
Provenance provenance_from_string(std::string_view s);

/// Paired record. For synthetic/forged samples, `stamped` equals
/// `clean_doc` bit-exactly at every pixel the ink does not touch.
struct LabeledSample {
  Image clean_doc;  // RGB
  Image stamped;    // RGB
  Image mask;       // 1 channel, {0, 1}
  std::string text;
  Rect bbox;
  Provenance provenance = Provenance::synthetic;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Procedural document background law.
struct DocumentStyle {
  std::array<double, 3> paper_rgb{0.96, 0.95, 0.92};
  double paper_jitter = 0.015;
  Range line_gray{0.25, 0.45};
  int line_height = 3;
  int line_pitch = 7;
  int margin = 4;
  double scanner_noise = 0.0;  // per-pixel Gaussian sigma applied after stamping
  friend bool operator==(const DocumentStyle&, const DocumentStyle&) = default;
};

struct SynthConfig {
  int doc_width = 64;
  int doc_height = 64;
  Range outer_radius{20.0, 27.0};
  Range ring_width{2.0, 3.0};
  Range glyph_height{6.5, 8.0};
  Range arc_span{200.0, 260.0};
  Range star_scale{0.0, 0.3};
  Range base_opacity{0.8, 0.95};
  Range texture_strength{0.1, 0.3};
  Range texture_cell{5.0, 8.0};
  Range rotation{-12.0, 12.0};
  Range shear{-0.05, 0.05};
  Range radial{-0.03, 0.03};
  std::array<double, 3> ink_mean{0.78, 0.08, 0.10};
  double ink_sigma = 0.05;
  std::vector<std::string> text_pool{"ACME CORP", "ORBIT LTD", "NOVA & CO", "DELTA BANK", "KITE 2024"};
  int random_text_length = 0;  // > 0: legends drawn uniformly from text_alphabet
  std::string text_alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
  double mask_threshold = 0.05;
  DocumentStyle document;

  /// Throws InvalidRange or EmptyTextPool.
  void validate() const;

  /// Held-out appearance law standing in for scanned real seals: darker,
  /// bluish-crimson ink, lower and blotchier coverage, scanner noise.
  static SynthConfig real_proxy();
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Supersampling factor per axis used by every rasterizer here.
inline constexpr int kSupersample = 4;

/// Glyph cells narrower than this fraction of a glyph width count as overlap.
inline constexpr double kMinPackingRatio = 0.85;

SealSpec sample_seal_spec(Rng& rng, const SynthConfig& cfg);

SealStamp render_seal(const SealSpec& spec);

SealStamp perturb_geometry(const SealStamp& stamp, const WarpParams& warp);

/// render_seal followed by perturb_geometry with spec.warp.
SealStamp synthesize_stamp(const SealSpec& spec);

/// Multiplies alpha by `factor` in [0, 1] and recomputes the bbox.
SealStamp scale_alpha(const SealStamp& stamp, double factor);

/// Alpha-over of the stamp onto `doc`; rejects stamps whose ink leaves the page.
LabeledSample composite(const Image& doc, const SealStamp& stamp, double mask_threshold = 0.05);

Image make_document(Rng& rng, int width, int height, const DocumentStyle& style);

/// Adds zero-mean Gaussian noise and clamps to [0, 1].
void add_scanner_noise(Image& image, Rng& rng, double sigma);

/// Full traditional synthesis of one labeled sample.
LabeledSample synthesize_sample(Rng& rng, const SynthConfig& cfg);

/// Real-proxy sample: traditional synthesis under `cfg` (typically
/// SynthConfig::real_proxy()) plus scanner noise; provenance = real. The
/// mask/text/bbox are kept for evaluation use only.
LabeledSample synthesize_real_proxy(Rng& rng, const SynthConfig& cfg);

/// Glyph placement used by the renderer: centre angle (degrees, clockwise
/// from 12 o'clock) of legend character `index`.
double glyph_center_angle_deg(const SealSpec& spec, std::size_t index);

/// Radial band [inner, outer] that legend glyphs occupy.
std::pair<double, double> glyph_band(const SealSpec& spec);

}  // namespace seal2real::synth
