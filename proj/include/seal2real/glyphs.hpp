#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace seal2real::synth {

inline constexpr int kGlyphCols = 5;
inline constexpr int kGlyphRows = 7;

/// One 5x7 glyph; bit 4 of each row byte is the leftmost column.
using GlyphBitmap = std::array<std::uint8_t, kGlyphRows>;

/// Characters the built-in glyph set can draw: A-Z, 0-9, space and "-.&".
inline constexpr std::string_view kGlyphAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 -.&";

/// Bitmap for `ch`, or nullopt when the glyph set does not cover it.
std::optional<GlyphBitmap> glyph(char ch) noexcept;

inline bool glyph_pixel(const GlyphBitmap& g, int col, int row) noexcept {
  return (g[row] >> (kGlyphCols - 1 - col)) & 1u;
}

}  // namespace seal2real::synth
