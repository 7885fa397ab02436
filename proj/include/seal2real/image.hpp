#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace seal2real {

/// Interleaved float image (row-major, HWC), values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return pixels.empty(); }
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  float& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
  float at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.pixels == b.pixels;
  }
};

/// Rectangle in pixel coordinates, half-open: [x0, x1) x [y0, y1).
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool empty() const { return x1 <= x0 || y1 <= y0; }
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Bilinear resize (align-corners off). Returns a copy when sizes match.
Image resize_bilinear(const Image& src, int width, int height);

/// Quantize to 8-bit and back; the exact value set a PNG round-trip yields.
Image quantize8(const Image& src);

// PNG codec (8-bit). Masks are single-channel images with values {0, 1}
// stored as {0, 255}.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// True when the file starts with the PNG signature.
bool looks_like_png(const std::filesystem::path& path);

/// Tiles equally sized RGB images into a rows x cols grid.
Image tile_grid(const std::vector<Image>& images, int cols);

}  // namespace seal2real
