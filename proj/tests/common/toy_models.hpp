#pragma once

// Small hand-built classifiers shared by the unit and acceptance suites.

#include <cstdint>
#include <span>
#include <vector>

#include "nmsparse/experiments.hpp"
#include "nmsparse/rng.hpp"

namespace nmsparse::testing {

inline CompositionalClassifier norm_scaled_toy(std::uint64_t seed) { return norm_scaled_classifier(seed); }

inline std::vector<std::vector<double>> ball_inputs(std::size_t n, std::size_t dim,
                                                    std::uint64_t seed) {
  return ball_samples(n, dim, seed);
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace nmsparse::testing
