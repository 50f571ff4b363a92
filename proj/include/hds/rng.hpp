#pragma once

#include <cmath>
#include <cstdint>

namespace hds {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based random stream. The n-th draw is a pure function of
/// (seed, n), so streams are reproducible across platforms and independent
/// of the order in which sibling streams are consumed.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  std::uint64_t next_u64() { return mix64(mix64(seed) ^ (counter++ * 0xd1b54a32d192ed03ULL)); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one draw per call; the sine branch is discarded).
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// Child stream keyed by `tag`; does not advance this stream.
  RngState fork(std::uint64_t tag) const {
    return RngState{mix64(seed ^ mix64(tag ^ 0x632be59bd9b4e019ULL)), 0};
  }

  friend bool operator==(const RngState&, const RngState&) = default;
};

}  // namespace hds
