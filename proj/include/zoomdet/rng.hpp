#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace zoomdet {

// SplitMix64 generator. Every stochastic component in the project draws from
// this engine so that a (seed, call order) pair fully determines a run,
// independent of the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive on both ends
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  // Box-Muller with a fixed two-draw consumption per call, so interleaved
  // streams stay aligned.
  double normal(double mean = 0.0, double sd = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(6.283185307179586 * u2);
  }

  // Knuth's method; fine for the small rates used by the simulator.
  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    int k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= uniform();
    } while (p > limit);
    return k - 1;
  }

 private:
  std::uint64_t state_;
};

namespace detail {
inline std::uint64_t mix_one(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  std::uint64_t z = h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Derive an independent seed from a tuple of values.
template <typename... Ts>
std::uint64_t mix_seed(std::uint64_t first, Ts... rest) {
  std::uint64_t h = detail::mix_one(0x243f6a8885a308d3ULL, first);
  ((h = detail::mix_one(h, static_cast<std::uint64_t>(rest))), ...);
  return h;
}

inline std::uint64_t seed_bits(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace zoomdet
