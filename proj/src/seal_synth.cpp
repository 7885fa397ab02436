#include "seal2real/seal_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "seal2real/error.hpp"
#include "seal2real/glyphs.hpp"

namespace seal2real::synth {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void check_range(const Range& r, const char* name, double lo, double hi) {
  require(r.min <= r.max, Errc::InvalidRange, std::string(name) + ": min > max");
  require(r.min >= lo && r.max <= hi, Errc::InvalidRange,
          std::string(name) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

double draw(Rng& rng, const Range& r) { return r.min == r.max ? r.min : rng.uniform(r.min, r.max); }

double truncated_normal(Rng& rng, double mean, double sigma) {
  if (sigma <= 0.0) return std::clamp(mean, 0.0, 1.0);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double v = mean + sigma * rng.normal();
    if (v >= 0.0 && v <= 1.0) return v;
  }
  return std::clamp(mean, 0.0, 1.0);
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

double lattice(std::uint64_t seed, int ix, int iy) {
  const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) << 32) |
                            static_cast<std::uint32_t>(iy);
  return static_cast<double>(mix_seed(seed, key) >> 11) * 0x1.0p-53;
}

/// Two-octave value noise in [0, 1].
double value_noise(std::uint64_t seed, double x, double y, double cell) {
  double total = 0.0;
  double weight = 0.0;
  double amp = 1.0;
  for (int octave = 0; octave < 2; ++octave) {
    const double fx = x / cell;
    const double fy = y / cell;
    const int ix = static_cast<int>(std::floor(fx));
    const int iy = static_cast<int>(std::floor(fy));
    const double tx = smoothstep(fx - ix);
    const double ty = smoothstep(fy - iy);
    const std::uint64_t s = seed + 0x51ed27ULL * octave;
    const double a = lattice(s, ix, iy), b = lattice(s, ix + 1, iy);
    const double c = lattice(s, ix, iy + 1), d = lattice(s, ix + 1, iy + 1);
    total += amp * ((a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty);
    weight += amp;
    amp *= 0.5;
    cell *= 0.5;
  }
  return total / weight;
}

bool in_star(double x, double y, double outer) {
  // 5-point star, first tip at 12 o'clock; even-odd polygon test
  constexpr int kVerts = 10;
  const double inner = outer * 0.382;
  double vx[kVerts], vy[kVerts];
  for (int i = 0; i < kVerts; ++i) {
    const double ang = i * std::numbers::pi / 5.0;
    const double r = (i % 2 == 0) ? outer : inner;
    vx[i] = r * std::sin(ang);
    vy[i] = -r * std::cos(ang);
  }
  bool inside = false;
  for (int i = 0, j = kVerts - 1; i < kVerts; j = i++) {
    if (((vy[i] > y) != (vy[j] > y)) && (x < (vx[j] - vx[i]) * (y - vy[i]) / (vy[j] - vy[i]) + vx[i]))
      inside = !inside;
  }
  return inside;
}

// Coverage below this is dropped: a float blend would round it back to the page.
constexpr double kMinAlpha = 1.0 / 1024.0;

float visible_alpha(double a) { return a < kMinAlpha ? 0.0f : static_cast<float>(a); }

Rect alpha_bbox(const Image& rgba) {
  Rect box{rgba.width, rgba.height, 0, 0};
  for (int y = 0; y < rgba.height; ++y)
    for (int x = 0; x < rgba.width; ++x)
      if (rgba.at(x, y, 3) > 0.0f) {
        box.x0 = std::min(box.x0, x);
        box.y0 = std::min(box.y0, y);
        box.x1 = std::max(box.x1, x + 1);
        box.y1 = std::max(box.y1, y + 1);
      }
  if (box.empty()) return Rect{};
  return box;
}

void fill_ink(Image& rgba, const std::array<double, 3>& ink) {
  for (int y = 0; y < rgba.height; ++y)
    for (int x = 0; x < rgba.width; ++x)
      for (int c = 0; c < 3; ++c) rgba.at(x, y, c) = static_cast<float>(ink[c]);
}

int stamp_side(double radius) { return 2 * static_cast<int>(std::ceil(radius)) + 4; }

}  // namespace

// ---------------------------------------------------------------------------

WarpParams WarpParams::make(double rotation_deg, double shear, double radial_distortion) {
  WarpParams w{rotation_deg, shear, radial_distortion};
  w.validate();
  return w;
}

void WarpParams::validate() const {
  require(std::isfinite(rotation_deg), Errc::WarpOutOfBounds, "rotation must be finite");
  require(std::abs(shear) <= kMaxShear, Errc::WarpOutOfBounds, "shear outside [-0.2, 0.2]");
  require(std::abs(radial_distortion) <= kMaxRadial, Errc::WarpOutOfBounds, "radial distortion outside [-0.1, 0.1]");
}

void SealSpec::validate() const {
  require(ring_width >= 1.0 && outer_radius > ring_width, Errc::InvalidRange, "need outer_radius > ring_width >= 1");
  require(arc_span_deg > 0.0 && arc_span_deg <= 360.0, Errc::InvalidRange, "arc_span outside (0, 360]");
  require(star_scale >= 0.0 && star_scale <= 1.0, Errc::InvalidRange, "star_scale outside [0, 1]");
  for (double c : ink_rgb) require(c >= 0.0 && c <= 1.0, Errc::InvalidRange, "ink channel outside [0, 1]");
  require(base_opacity > 0.0 && base_opacity <= 1.0, Errc::InvalidRange, "base_opacity outside (0, 1]");
  require(texture_strength >= 0.0 && texture_strength < 1.0, Errc::InvalidRange, "texture_strength outside [0, 1)");
  require(texture_cell > 0.0, Errc::InvalidRange, "texture_cell must be positive");
  require(glyph_height > 0.0, Errc::InvalidRange, "glyph_height must be positive");
  warp.validate();
}

std::string_view to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::synthetic: return "synthetic";
    case Provenance::forged: return "forged";
    case Provenance::real: return "real";
  }
  return "synthetic";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "forged") return Provenance::forged;
  if (s == "real") return Provenance::real;
  fail(Errc::InvalidConfig, "unknown provenance '" + std::string(s) + "'");
}

void SynthConfig::validate() const {
  require(doc_width >= 8 && doc_height >= 8, Errc::InvalidRange, "document too small");
  check_range(outer_radius, "outer_radius", 2.0, 1e4);
  check_range(ring_width, "ring_width", 1.0, 1e4);
  require(ring_width.max < outer_radius.min, Errc::InvalidRange, "ring_width must stay below outer_radius");
  check_range(glyph_height, "glyph_height", 1.0, 1e4);
  check_range(arc_span, "arc_span", 1e-6, 360.0);
  check_range(star_scale, "star_scale", 0.0, 1.0);
  check_range(base_opacity, "base_opacity", 1e-6, 1.0);
  check_range(texture_strength, "texture_strength", 0.0, 0.99);
  check_range(texture_cell, "texture_cell", 0.5, 1e4);
  check_range(rotation, "rotation", -360.0, 360.0);
  check_range(shear, "shear", -WarpParams::kMaxShear, WarpParams::kMaxShear);
  check_range(radial, "radial", -WarpParams::kMaxRadial, WarpParams::kMaxRadial);
  for (double c : ink_mean) require(c >= 0.0 && c <= 1.0, Errc::InvalidRange, "ink_mean outside [0, 1]");
  require(ink_sigma >= 0.0, Errc::InvalidRange, "ink_sigma negative");
  require(mask_threshold >= 0.0 && mask_threshold <= 1.0, Errc::InvalidRange, "mask_threshold outside [0, 1]");
  check_range(document.line_gray, "document.line_gray", 0.0, 1.0);
  require(document.scanner_noise >= 0.0, Errc::InvalidRange, "scanner_noise negative");
  if (random_text_length > 0) {
    require(!text_alphabet.empty(), Errc::EmptyTextPool, "random legends need a non-empty alphabet");
    for (char ch : text_alphabet)
      require(glyph(ch).has_value(), Errc::InvalidRange, std::string("alphabet character '") + ch + "' has no glyph");
  } else {
    require(!text_pool.empty(), Errc::EmptyTextPool, "text pool is empty");
  }
  const double reach = outer_radius.max * (1.0 + std::max(std::abs(radial.min), std::abs(radial.max))) *
                       (1.0 + std::max(std::abs(shear.min), std::abs(shear.max)));
  require(2.0 * (std::ceil(reach) + 2.0) <= std::min(doc_width, doc_height), Errc::InvalidRange,
          "seals of outer_radius.max cannot fit on the document");
}

SynthConfig SynthConfig::real_proxy() {
  SynthConfig cfg;
  cfg.ink_mean = {0.55, 0.12, 0.38};
  cfg.ink_sigma = 0.04;
  cfg.base_opacity = {0.55, 0.75};
  cfg.texture_strength = {0.45, 0.7};
  cfg.texture_cell = {2.0, 3.5};
  cfg.document.paper_rgb = {0.94, 0.92, 0.87};
  cfg.document.scanner_noise = 0.02;
  return cfg;
}

// ---------------------------------------------------------------------------

SealSpec sample_seal_spec(Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  SealSpec spec;
  if (cfg.random_text_length > 0) {
    spec.text.resize(cfg.random_text_length);
    for (char& ch : spec.text)
      ch = cfg.text_alphabet[rng.uniform_int(0, static_cast<std::int64_t>(cfg.text_alphabet.size()) - 1)];
  } else {
    spec.text = cfg.text_pool[rng.uniform_int(0, static_cast<std::int64_t>(cfg.text_pool.size()) - 1)];
  }
  spec.outer_radius = draw(rng, cfg.outer_radius);
  spec.ring_width = draw(rng, cfg.ring_width);
  spec.glyph_height = draw(rng, cfg.glyph_height);
  spec.arc_span_deg = draw(rng, cfg.arc_span);
  spec.star_scale = draw(rng, cfg.star_scale);
  for (int c = 0; c < 3; ++c) spec.ink_rgb[c] = truncated_normal(rng, cfg.ink_mean[c], cfg.ink_sigma);
  spec.base_opacity = draw(rng, cfg.base_opacity);
  spec.texture_strength = draw(rng, cfg.texture_strength);
  spec.texture_cell = draw(rng, cfg.texture_cell);
  spec.texture_seed = rng.next_u64();
  spec.warp = WarpParams{draw(rng, cfg.rotation), draw(rng, cfg.shear), draw(rng, cfg.radial)};

  // keep the warped ink fully on the page; resampling spreads it by up to a pixel
  const double reach = spec.outer_radius * (1.0 + std::abs(spec.warp.radial_distortion)) * (1.0 + std::abs(spec.warp.shear));
  const int pad = static_cast<int>(std::ceil(reach)) + 2;
  spec.center_x = static_cast<int>(rng.uniform_int(pad, cfg.doc_width - pad));
  spec.center_y = static_cast<int>(rng.uniform_int(pad, cfg.doc_height - pad));
  return spec;
}

std::pair<double, double> glyph_band(const SealSpec& spec) {
  const double gap = std::max(1.0, 0.08 * spec.outer_radius);
  const double top = spec.outer_radius - spec.ring_width - gap;
  return {top - spec.glyph_height, top};
}

double glyph_center_angle_deg(const SealSpec& spec, std::size_t index) {
  const double n = static_cast<double>(spec.text.size());
  return -spec.arc_span_deg / 2.0 + (static_cast<double>(index) + 0.5) * spec.arc_span_deg / n;
}

SealStamp render_seal(const SealSpec& spec) {
  spec.validate();
  const double outer = spec.outer_radius;
  const double inner = outer - spec.ring_width;
  const auto [band_lo, band_hi] = glyph_band(spec);
  const double glyph_w = spec.glyph_height * kGlyphCols / kGlyphRows;
  const std::size_t n = spec.text.size();

  std::vector<GlyphBitmap> glyphs;
  std::vector<double> cos_a, sin_a;
  if (n > 0) {
    require(band_lo > 0.0, Errc::InvalidRange, "glyph band does not fit inside the ring");
    const double cell = spec.arc_span_deg * kDeg / static_cast<double>(n) * (band_lo + band_hi) / 2.0;
    require(cell >= kMinPackingRatio * glyph_w, Errc::TextTooLongForArc,
            "legend of " + std::to_string(n) + " glyphs overlaps on a " + std::to_string(spec.arc_span_deg) + " degree arc");
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = glyph(spec.text[i]);
      require(g.has_value(), Errc::InvalidRange, std::string("no glyph for character '") + spec.text[i] + "'");
      glyphs.push_back(*g);
      const double a = glyph_center_angle_deg(spec, i) * kDeg;
      cos_a.push_back(std::cos(a));
      sin_a.push_back(std::sin(a));
    }
  }
  const double star_r = spec.star_scale * outer;

  const int side = stamp_side(outer);
  const double c = side / 2.0;
  SealStamp stamp;
  stamp.spec = spec;
  stamp.raster = Image(side, side, 4);
  fill_ink(stamp.raster, spec.ink_rgb);

  constexpr int ss = kSupersample;
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      int hits = 0;
      for (int j = 0; j < ss; ++j) {
        for (int i = 0; i < ss; ++i) {
          const double dx = px + (i + 0.5) / ss - c;
          const double dy = py + (j + 0.5) / ss - c;
          const double r = std::hypot(dx, dy);
          bool ink = r >= inner && r <= outer;
          if (!ink && n > 0 && r >= band_lo - glyph_w && r <= band_hi + glyph_w) {
            for (std::size_t k = 0; k < n && !ink; ++k) {
              const double along = dx * cos_a[k] + dy * sin_a[k];
              const double radial = dx * sin_a[k] - dy * cos_a[k];
              if (std::abs(along) > glyph_w / 2.0 || radial < band_lo || radial > band_hi) continue;
              const int col = std::min(kGlyphCols - 1, static_cast<int>((along + glyph_w / 2.0) / glyph_w * kGlyphCols));
              const int row = std::min(kGlyphRows - 1, static_cast<int>((band_hi - radial) / spec.glyph_height * kGlyphRows));
              ink = glyph_pixel(glyphs[k], col, row);
            }
          }
          if (!ink && star_r > 0.0 && r <= star_r) ink = in_star(dx, dy, star_r);
          hits += ink ? 1 : 0;
        }
      }
      if (hits == 0) continue;
      const double coverage = static_cast<double>(hits) / (ss * ss);
      const double tex = 1.0 - spec.texture_strength * value_noise(spec.texture_seed, px, py, spec.texture_cell);
      stamp.raster.at(px, py, 3) = visible_alpha(coverage * spec.base_opacity * tex);
    }
  }
  stamp.tight_bbox = alpha_bbox(stamp.raster);
  return stamp;
}

SealStamp perturb_geometry(const SealStamp& stamp, const WarpParams& warp) {
  warp.validate();
  if (warp.is_identity()) return stamp;

  const double radius = stamp.spec.outer_radius;
  const double reach = radius * (1.0 + std::abs(warp.radial_distortion)) * (1.0 + std::abs(warp.shear));
  const int side = std::max(stamp_side(reach), stamp.raster.width);
  const double c_out = side / 2.0;
  const double c_src = stamp.raster.width / 2.0;
  const double cos_t = std::cos(warp.rotation_deg * kDeg);
  const double sin_t = std::sin(warp.rotation_deg * kDeg);
  const double k = warp.radial_distortion;

  const Image& src = stamp.raster;
  auto sample_alpha = [&](double x, double y) {
    // bilinear on pixel centres, zero outside
    const double fx = x - 0.5, fy = y - 0.5;
    const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
    const double wx = fx - x0, wy = fy - y0;
    auto at = [&](int xx, int yy) -> double {
      if (xx < 0 || yy < 0 || xx >= src.width || yy >= src.height) return 0.0;
      return src.at(xx, yy, 3);
    };
    return (at(x0, y0) * (1 - wx) + at(x0 + 1, y0) * wx) * (1 - wy) +
           (at(x0, y0 + 1) * (1 - wx) + at(x0 + 1, y0 + 1) * wx) * wy;
  };

  SealStamp out;
  out.spec = stamp.spec;
  out.spec.warp = warp;
  out.raster = Image(side, side, 4);
  fill_ink(out.raster, stamp.spec.ink_rgb);

  constexpr int ss = kSupersample;
  for (int py = 0; py < side; ++py) {
    for (int px = 0; px < side; ++px) {
      double acc = 0.0;
      for (int j = 0; j < ss; ++j) {
        for (int i = 0; i < ss; ++i) {
          const double ox = px + (i + 0.5) / ss - c_out;
          const double oy = py + (j + 0.5) / ss - c_out;
          // forward map is radial -> shear -> rotate; invert in reverse order
          const double rx = ox * cos_t + oy * sin_t;
          const double ry = -ox * sin_t + oy * cos_t;
          const double ux = rx - warp.shear * ry;
          const double uy = ry;
          const double rho = std::hypot(ux, uy);
          double m = rho;
          if (k != 0.0 && rho > 0.0) {
            for (int it = 0; it < 8; ++it) {
              const double f = m * (1.0 + k * m * m / (radius * radius)) - rho;
              const double df = 1.0 + 3.0 * k * m * m / (radius * radius);
              m -= f / df;
            }
          }
          const double scale = rho > 0.0 ? m / rho : 1.0;
          acc += sample_alpha(ux * scale + c_src, uy * scale + c_src);
        }
      }
      out.raster.at(px, py, 3) = visible_alpha(acc / (ss * ss));
    }
  }
  out.tight_bbox = alpha_bbox(out.raster);
  return out;
}

SealStamp synthesize_stamp(const SealSpec& spec) { return perturb_geometry(render_seal(spec), spec.warp); }

SealStamp scale_alpha(const SealStamp& stamp, double factor) {
  require(factor >= 0.0 && factor <= 1.0, Errc::InvalidRange, "alpha scale outside [0, 1]");
  SealStamp out = stamp;
  for (int y = 0; y < out.raster.height; ++y)
    for (int x = 0; x < out.raster.width; ++x) out.raster.at(x, y, 3) = visible_alpha(out.raster.at(x, y, 3) * factor);
  out.tight_bbox = alpha_bbox(out.raster);
  return out;
}

LabeledSample composite(const Image& doc, const SealStamp& stamp, double mask_threshold) {
  require(doc.channels == 3, Errc::ShapeMismatch, "document must be RGB");
  require(mask_threshold >= 0.0 && mask_threshold <= 1.0, Errc::InvalidRange, "mask threshold outside [0, 1]");
  const int ox = stamp.origin_x();
  const int oy = stamp.origin_y();

  LabeledSample sample;
  sample.clean_doc = doc;
  sample.stamped = doc;
  sample.mask = Image(doc.width, doc.height, 1, 0.0f);
  sample.text = stamp.spec.text;
  sample.provenance = Provenance::synthetic;

  const Rect& tb = stamp.tight_bbox;
  if (tb.empty()) return sample;
  const Rect placed{tb.x0 + ox, tb.y0 + oy, tb.x1 + ox, tb.y1 + oy};
  require(placed.x0 >= 0 && placed.y0 >= 0 && placed.x1 <= doc.width && placed.y1 <= doc.height, Errc::OutOfBounds,
          "stamp at (" + std::to_string(stamp.spec.center_x) + ", " + std::to_string(stamp.spec.center_y) +
              ") leaves the " + std::to_string(doc.width) + "x" + std::to_string(doc.height) + " document");
  sample.bbox = placed;

  for (int y = tb.y0; y < tb.y1; ++y) {
    for (int x = tb.x0; x < tb.x1; ++x) {
      const float a = stamp.raster.at(x, y, 3);
      if (a <= 0.0f) continue;
      const int dx = x + ox, dy = y + oy;
      for (int c = 0; c < 3; ++c) {
        const float under = doc.at(dx, dy, c);
        sample.stamped.at(dx, dy, c) = under * (1.0f - a) + stamp.raster.at(x, y, c) * a;
      }
      if (a > mask_threshold) sample.mask.at(dx, dy, 0) = 1.0f;
    }
  }
  return sample;
}

Image make_document(Rng& rng, int width, int height, const DocumentStyle& style) {
  Image doc(width, height, 3);
  std::array<double, 3> paper{};
  for (int c = 0; c < 3; ++c)
    paper[c] = std::clamp(style.paper_rgb[c] + style.paper_jitter * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) doc.at(x, y, c) = static_cast<float>(paper[c]);

  // text lines: runs of dark "words" separated by gaps
  const int pitch = std::max(style.line_pitch, style.line_height + 1);
  const int first = style.margin + static_cast<int>(rng.uniform_int(0, pitch - 1));
  for (int top = first; top + style.line_height <= height - style.margin; top += pitch) {
    const double gray = rng.uniform(style.line_gray.min, style.line_gray.max);
    int x = style.margin + static_cast<int>(rng.uniform_int(0, 3));
    const int line_end = width - style.margin - static_cast<int>(rng.uniform_int(0, width / 4));
    while (x < line_end) {
      const int word = static_cast<int>(rng.uniform_int(3, 9));
      for (int xx = x; xx < std::min(x + word, line_end); ++xx)
        for (int yy = top; yy < top + style.line_height; ++yy)
          for (int c = 0; c < 3; ++c) doc.at(xx, yy, c) = static_cast<float>(gray);
      x += word + static_cast<int>(rng.uniform_int(2, 3));
    }
  }
  return doc;
}

void add_scanner_noise(Image& image, Rng& rng, double sigma) {
  if (sigma <= 0.0) return;
  for (float& v : image.pixels) v = static_cast<float>(std::clamp(v + sigma * rng.normal(), 0.0, 1.0));
}

LabeledSample synthesize_sample(Rng& rng, const SynthConfig& cfg) {
  cfg.validate();
  const Image doc = make_document(rng, cfg.doc_width, cfg.doc_height, cfg.document);
  const SealSpec spec = sample_seal_spec(rng, cfg);
  return composite(doc, synthesize_stamp(spec), cfg.mask_threshold);
}

LabeledSample synthesize_real_proxy(Rng& rng, const SynthConfig& cfg) {
  LabeledSample sample = synthesize_sample(rng, cfg);
  add_scanner_noise(sample.stamped, rng, cfg.document.scanner_noise);
  sample.provenance = Provenance::real;
  return sample;
}

}  // namespace seal2real::synth
