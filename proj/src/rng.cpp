#include "seal2real/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "seal2real/error.hpp"

namespace seal2real {

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  require(lo <= hi, Errc::InvalidRange, "uniform_int: lo > hi");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // rejection sampling keeps the law exactly uniform
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return lo + static_cast<std::int64_t>(v % span);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Rng Rng::fork(std::uint64_t salt) { return Rng(mix_seed(next_u64(), salt)); }

std::string Rng::state() const {
  std::ostringstream os;
  os << draws_ << ' ' << engine_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  std::uint64_t draws = 0;
  std::mt19937_64 engine;
  is >> draws >> engine;
  require(!is.fail(), Errc::BadCheckpoint, "unparseable RNG state");
  draws_ = draws;
  engine_ = engine;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace seal2real
