#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace seal2real {

/// Seeded generator with a portable draw law and a serializable state.
///
/// Uniforms are built from the top 53 bits of a 64-bit Mersenne twister and
/// normals by Box-Muller (one value per pair, no cached state), so that the
/// whole stream is a function of the engine state alone. `draws()` counts
/// engine invocations and is recorded in step logs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] (inclusive).
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  double normal();

  /// Derives an independent child stream (e.g. one per dataset entry).
  Rng fork(std::uint64_t salt);

  std::uint64_t draws() const { return draws_; }

  std::string state() const;
  void restore(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_ && a.draws_ == b.draws_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

/// SplitMix64 finalizer; used to derive seeds from (seed, salt) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

}  // namespace seal2real
