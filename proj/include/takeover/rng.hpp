#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace takeover {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Deterministic random stream. Gaussian draws use Box-Muller without
/// caching, so the number of underlying draws per call is fixed and
/// streams stay reproducible across copies.
class Rng {
 public:
  Rng() : Rng(0, 0) {}

  Rng(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = seed ^ (0xd1b54a32d192ed03ULL * (stream_id + 1));
    // Warm the mixer so nearby (seed, stream) pairs decorrelate.
    detail::splitmix64(s);
    engine_.seed(detail::splitmix64(s));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform draw in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no cache).
  double gauss() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double gauss(double mean, double stddev) { return mean + stddev * gauss(); }

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent, reproducible stream: identical (seed, stream_id)
/// pairs yield bit-identical streams.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return Rng(seed, stream_id);
}

/// Stable mix of several identifiers into a sub-seed (used for
/// per-particle, per-step rollout streams).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c = 0) {
  std::uint64_t s = a;
  s ^= detail::splitmix64(b) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
  s ^= detail::splitmix64(c) + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
  return detail::splitmix64(s);
}

}  // namespace takeover
