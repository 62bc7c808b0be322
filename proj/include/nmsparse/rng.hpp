#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>

namespace nmsparse {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stateless random stream: every draw is a pure function of the seed and
/// a tuple of integer counters, so values do not depend on evaluation order
/// or on which thread asks for them.
class CounterRng {
 public:
  explicit constexpr CounterRng(std::uint64_t seed) : seed_(seed) {}

  template <std::integral... K>
  constexpr std::uint64_t bits(K... key) const {
    std::uint64_t h = mix64(seed_);
    ((h = mix64(h ^ mix64(static_cast<std::uint64_t>(key)))), ...);
    return h;
  }

  /// Uniform on the open interval (0, 1).
  template <std::integral... K>
  constexpr double uniform_open(K... key) const {
    // 53 random bits offset by half a step: neither endpoint is reachable.
    return (static_cast<double>(bits(key...) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi).
  template <std::integral... K>
  constexpr double uniform(double lo, double hi, K... key) const {
    return lo + (hi - lo) * (static_cast<double>(bits(key...) >> 11) * 0x1.0p-53);
  }

  /// Uniform integer in [0, n), n > 0.
  template <std::integral... K>
  std::uint64_t below(std::uint64_t n, K... key) const {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(bits(key...)) * n) >> 64);
  }

  /// Standard normal (Box-Muller).
  template <std::integral... K>
  double normal(K... key) const {
    const double u1 = uniform_open(key..., 0x6e6f726dULL);
    const double u2 = uniform_open(key..., 0x6e6f726eULL);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  constexpr std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace nmsparse
