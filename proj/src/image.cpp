#include "seal2real/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include "seal2real/error.hpp"

namespace seal2real {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Image resize_bilinear(const Image& src, int width, int height) {
  if (src.width == width && src.height == height) return src;
  Image out(width, height, src.channels);
  const double sx = static_cast<double>(src.width) / width;
  const double sy = static_cast<double>(src.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(x0, y0, c) * (1 - wx) + src.at(x1, y0, c) * wx;
        const double bot = src.at(x0, y1, c) * (1 - wx) + src.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image quantize8(const Image& src) {
  Image out = src;
  for (float& v : out.pixels) v = to_byte(v) / 255.0f;
  return out;
}

bool looks_like_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  png_byte sig[8] = {};
  if (!in.read(reinterpret_cast<char*>(sig), 8)) return false;
  return png_sig_cmp(sig, 0, 8) == 0;
}

Image read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  require(file != nullptr, Errc::IoFailure, "cannot open " + path.string());
  require(looks_like_png(path), Errc::IoFailure, "not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::IoFailure, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(Errc::IoFailure, "png_create_info_struct failed");
  }
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::IoFailure, "corrupt PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);

  const int color_type = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image out(width, height, channels);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width * channels; ++x) out.pixels[static_cast<std::size_t>(y) * width * channels + x] = rows[y][x] / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  require(image.channels == 1 || image.channels == 3 || image.channels == 4, Errc::IoFailure,
          "unsupported channel count for PNG");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  require(file != nullptr, Errc::IoFailure, "cannot create " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::IoFailure, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(Errc::IoFailure, "png_create_info_struct failed");
  }
  std::vector<png_byte> buffer(static_cast<std::size_t>(image.width) * image.height * image.channels);
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = to_byte(image.pixels[i]);
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y)
    rows[y] = buffer.data() + static_cast<std::size_t>(y) * image.width * image.channels;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::IoFailure, "failed writing " + path.string());
  }
  const int color_type = image.channels == 1   ? PNG_COLOR_TYPE_GRAY
                         : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                               : PNG_COLOR_TYPE_RGBA;
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image tile_grid(const std::vector<Image>& images, int cols) {
  require(!images.empty() && cols > 0, Errc::InvalidConfig, "tile_grid: nothing to tile");
  const Image& first = images.front();
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  Image grid(first.width * cols, first.height * rows, first.channels, 1.0f);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& im = images[i];
    require(im.same_shape(first), Errc::ShapeMismatch, "tile_grid: mixed image shapes");
    const int ox = static_cast<int>(i % cols) * first.width;
    const int oy = static_cast<int>(i / cols) * first.height;
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x)
        for (int c = 0; c < im.channels; ++c) grid.at(ox + x, oy + y, c) = im.at(x, y, c);
  }
  return grid;
}

}  // namespace seal2real
