#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <cstddef>

namespace cloze::numerics {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// FNV-1a over bytes; stable across platforms and runs.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xCBF29CE484222325ULL) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Per-component stream seed: stable hash of (seed, component name).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view component) {
  return splitmix64(fnv1a(component) ^ splitmix64(seed));
}

/// Counter-based draw: a pure function of its four coordinates.
constexpr std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t step, std::uint64_t op,
                                     std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed ^ 0xD1B54A32D192ED03ULL) ^ step) ^ (op * 0x9E3779B97F4A7C15ULL) ^
                    splitmix64(index));
}

/// Uniform in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

/// Randomness state threaded through a forward pass. Dropout masks are
/// derived from (seed, step, op id, element), so a pass is reproducible
/// and independent of thread scheduling.
struct ForwardContext {
  bool train = false;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::uint64_t next_op = 0;

  std::uint64_t take_op_id() { return next_op++; }
};


/// Small sequential generator with platform-independent draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return splitmix64(state_);
  }
  double uniform() { return to_unit(next()); }
  /// Uniform in [0, n) without modulo bias.
  std::uint64_t index(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do x = next(); while (x >= limit);
    return x % n;
  }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace cloze::numerics
