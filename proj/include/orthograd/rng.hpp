#pragma once

#include <cmath>
#include <cstdint>

// Counter-based random numbers.  Every draw is a pure function of
// (key, counter), so any sample in a run can be regenerated in isolation:
// streams stay reproducible under seeking, checkpoint resume, and
// out-of-order batch assembly.  The mixer is the splitmix64 finalizer.

namespace orthograd::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

// i-th output of the sequence identified by `key`.
constexpr std::uint64_t at(std::uint64_t key, std::uint64_t counter) {
  return mix64(key + (counter + 1) * kGolden);
}

// Derive an independent sub-key, e.g. per source or per purpose tag.
constexpr std::uint64_t derive(std::uint64_t key, std::uint64_t word) {
  return mix64(key ^ mix64(word + kGolden));
}

// Uniform in (0, 1]: never returns 0 so it is safe under log().
inline double uniform01(std::uint64_t key, std::uint64_t counter) {
  return static_cast<double>((at(key, counter) >> 11) + 1) * 0x1.0p-53;
}

// Standard normal via Box-Muller; draw c consumes raw counters 2c and 2c+1.
inline double normal(std::uint64_t key, std::uint64_t counter) {
  const double u1 = uniform01(key, 2 * counter);
  const double u2 = static_cast<double>(at(key, 2 * counter + 1) >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Bounded draw for shuffles; the modulo bias is negligible for 64-bit output.
inline std::uint64_t below(std::uint64_t key, std::uint64_t counter, std::uint64_t bound) {
  return at(key, counter) % bound;
}

}  // namespace orthograd::rng
