#pragma once

#include <cstdint>
#include <string_view>

namespace cseg {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// 64-bit FNV-1a; used to key per-parameter random streams by name.
constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Counter-based generator: the value at position `counter` depends only on
/// (key, counter), so any element of a stream can be produced independently
/// and results do not depend on call order or platform integer widths.
///
/// Gaussians use Box-Muller over consecutive uniform pairs: pair j consumes
/// counters 2j and 2j+1 and yields (r cos θ, r sin θ) for elements 2j, 2j+1.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t key) : key_(mix64(key ^ 0x6A09E667F3BCC909ULL)) {}

  /// Derives an independent key from a seed and two discriminators.
  static constexpr std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(seed + 0x9E3779B97F4A7C15ULL * (a + 1)) ^ (b * 0xD1B54A32D192ED03ULL));
  }

  constexpr std::uint64_t bits(std::uint64_t counter) const {
    return mix64(key_ + (counter + 1) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in the open interval (0, 1).
  double uniform(std::uint64_t counter) const;

  /// Standard normal sample for stream element `index`.
  double normal(std::uint64_t index) const;

 private:
  std::uint64_t key_;
};

/// Sequential view over a CounterRng, for generators that draw a variable
/// number of values.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : rng_(key) {}

  std::uint64_t next_bits() { return rng_.bits(counter_++); }
  double uniform() { return rng_.uniform(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer uniformly drawn from [lo, hi] inclusive.
  long uniform_int(long lo, long hi);
  double normal();

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
};

}  // namespace cseg
