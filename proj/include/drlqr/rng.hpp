#pragma once

#include <cmath>
#include <cstdint>

namespace drlqr::rng {

// Counter-based pseudo-random numbers built on the splitmix64 finalizer.
// Every draw is a pure function of (seed, stream, index), so sampling is
// order-independent, parallel-safe, and bit-reproducible across platforms
// and thread counts. Seeds are recorded in every output artifact.

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// n-th output of the splitmix64 sequence started at `state`, random access.
inline std::uint64_t nth_word(std::uint64_t state, std::uint64_t n) {
  return mix64(state + kGamma * (n + 1));
}

// Derive an independent substream (the documented seed-splitting rule:
// substream(seed, id) = mix64(seed + kGamma * (id + 1))).
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t id) {
  return mix64(seed + kGamma * (id + 1));
}

// Map a 64-bit word to a double in [0, 1) using the top 53 bits.
inline double uniform01(std::uint64_t word) {
  return static_cast<double>(word >> 11) * 0x1.0p-53;
}

inline double uniform(std::uint64_t word, double lo, double hi) {
  return lo + uniform01(word) * (hi - lo);
}

// Sequential view over one substream, for consumers that just want a stream.
class Stream {
 public:
  explicit Stream(std::uint64_t state) : state_(state) {}
  Stream(std::uint64_t seed, std::uint64_t id) : state_(substream(seed, id)) {}

  std::uint64_t next_word() { return nth_word(state_, counter_++); }
  double next_uniform01() { return uniform01(next_word()); }

  // Standard normal via Box-Muller; consumes two words.
  double next_normal() {
    double u1 = next_uniform01();
    double u2 = next_uniform01();
    // Guard against log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

 private:
  std::uint64_t state_;
  std::uint64_t counter_ = 0;
};

}  // namespace drlqr::rng
