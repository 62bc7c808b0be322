#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nmsparse/magnitude.hpp"
#include "nmsparse/model.hpp"

namespace nmsparse {

/// Desk-scale digit experiment: a training pool split into train and
/// validation, plus an independently generated test set.
struct DigitFixtureConfig {
  std::size_t samples = 10000;
  std::uint64_t data_seed = 7;
  double validation_fraction = 0.1;
  std::uint64_t split_seed = 1;
  std::size_t test_samples = 10000;
  std::uint64_t test_seed = 8;
};

struct DigitFixture {
  Dataset train;
  Dataset validation;
  Dataset test;
};

DigitFixture make_digit_fixture(const DigitFixtureConfig& config = {});

/// conv(1 -> channels) relu, conv(channels -> channels) relu, linear head.
/// Only the second conv is maskable: with a single input channel the first
/// layer has 9 weights per filter and pruning half of them is ruinous.
CompositionalClassifier make_digit_classifier(std::size_t side = 16, std::size_t channels = 16,
                                              std::size_t classes = 10);

/// Magnitude masks on every maskable layer, as effective weights in the
/// original column order. A budget of 0 skips the permutation search.
/// `results`, when given, receives one search result per maskable layer.
EffectiveWeights magnitude_weights(const CompositionalClassifier& model, std::size_t budget,
                                   std::vector<PermutationResult>* results = nullptr);

/// Uniformly random valid masks on every maskable layer.
EffectiveWeights random_mask_weights(const CompositionalClassifier& model, std::uint64_t seed);

/// Pattern usage of one mask.
struct MaskStats {
  std::size_t blocks = 0;
  std::size_t kept = 0;
  std::size_t total = 0;
  std::vector<std::size_t> histogram;  // blocks per pattern index

  double sparsity() const {
    return total == 0 ? 0.0 : 1.0 - static_cast<double>(kept) / static_cast<double>(total);
  }
};

/// Throws std::invalid_argument if the mask is not a valid N:M mask.
MaskStats mask_statistics(const BitMask& mask);

/// Rescales every row of `w` so its absolute sum equals `norm`.
void scale_rows_to(Matrix& w, double norm);

/// Two linear layers, 4 -> 4 (relu, bias-free, 2:4 blockable) -> 3, each
/// with operator infinity-norm 0.5. The head bias gives small inputs a
/// modest preference for class 0, so larger inputs can still flip it.
CompositionalClassifier norm_scaled_classifier(std::uint64_t seed);

/// Inputs in the max-norm ball of radius 1 with a spread of radii.
std::vector<std::vector<double>> ball_samples(std::size_t n, std::size_t dim, std::uint64_t seed);

}  // namespace nmsparse
