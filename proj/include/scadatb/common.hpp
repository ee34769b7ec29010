#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace scadatb {

// Virtual time. Integer microseconds keep schedules exact and reproducible.
using Micros = std::int64_t;

inline constexpr Micros kMicrosPerSecond = 1'000'000;

constexpr Micros from_seconds(double s) { return static_cast<Micros>(std::llround(s * 1e6)); }
constexpr double to_seconds(Micros us) { return static_cast<double>(us) / 1e6; }

// splitmix64 finalizer; used to derive independent seeds from a master seed.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0) {
  return mix64(mix64(master ^ fnv1a64(purpose)) + index);
}

// mt19937_64 with distribution helpers whose output does not depend on the
// standard library implementation (std::uniform_*_distribution is unspecified).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1)
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // [lo, hi]
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [lo, hi], unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    const std::uint64_t span = hi - lo + 1;
    if (span == 0) return engine_();
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + v % span;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace scadatb
