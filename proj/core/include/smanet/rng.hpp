#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace smanet {

// Deterministic random source. The uniform/normal transforms are spelled out
// here instead of using std::*_distribution so that a given seed produces the
// same stream on every standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  std::uint32_t next_u32() { return engine_(); }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() {
    const std::uint64_t hi = next_u32();
    const std::uint64_t lo = next_u32();
    return static_cast<double>((hi << 21) ^ (lo >> 11)) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint32_t uniform_int(std::uint32_t n) {
    const std::uint64_t span = 0x100000000ull - (0x100000000ull % n);
    std::uint32_t x = next_u32();
    while (x >= span) x = next_u32();
    return x % n;
  }

  // Box-Muller; one half-pair per call keeps the stream layout simple.
  double normal(double mean = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(static_cast<std::uint32_t>(i))]);
    }
  }

  // Derives an independent child seed; used for per-eye and per-epoch streams.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937 engine_;
};

}  // namespace smanet
