#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace seal2real {

/// 64-bit FNV-1a. Stable across platforms; used for config hashes and
/// string-seeded prompt initialization.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value);

}  // namespace seal2real
