#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace afocp {

// Deterministic randomness, reproducible across platforms and builds.
//
// Bit source: std::mt19937_64, whose output sequence is fixed by the C++
// standard. All variates are produced by explicit transforms of those bits;
// the platform <random> distributions are never used because their mappings
// are implementation-defined.
//
// Stream derivation: independent subsystem streams (model init, shuffling,
// noise, ...) are seeded with derive_seed(master, stream_id), a splitmix64
// finalizer over master XOR (stream_id * golden gamma). Adding a stream id
// never perturbs the draws of another stream.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_id) {
  return splitmix64(master ^ (stream_id * 0x9E3779B97F4A7C15ULL));
}

/// Fixed stream ids for the experiment protocol.
enum class SeedStream : std::uint64_t {
  kModelInit = 1,
  kTrainShuffle = 2,
  kSyntheticData = 3,
  kAttentionInit = 4,
  kAttentionShuffle = 5,
  kTargetSegments = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedStream stream) {
  return derive_seed(master, static_cast<std::uint64_t>(stream));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0,1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0,1): half-offset 53-bit grid, both endpoints excluded.
  double uniform01_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform on [a,b).
  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  /// Uniform strictly inside (a,b).
  double uniform_open(double a, double b) { return a + (b - a) * uniform01_open(); }

  /// Unbiased integer in [0,n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    while (true) {
      std::uint64_t x = engine_();
      unsigned __int128 m = static_cast<unsigned __int128>(x) * n;
      std::uint64_t low = static_cast<std::uint64_t>(m);
      if (low < n) {
        std::uint64_t threshold = (0ULL - n) % n;
        if (low < threshold) continue;
      }
      return static_cast<std::uint64_t>(m >> 64);
    }
  }

  /// Standard normal via Box-Muller on open-interval uniforms.
  /// Consumes two draws and caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace afocp
