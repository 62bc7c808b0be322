#include "nmsparse/experiments.hpp"

#include <cmath>
#include <stdexcept>

#include "nmsparse/digits.hpp"
#include "nmsparse/io.hpp"
#include "nmsparse/rng.hpp"
#include "nmsparse/sparse_kernel.hpp"

namespace nmsparse {

DigitFixture make_digit_fixture(const DigitFixtureConfig& config) {
  DigitFixture f;
  auto [train, validation] = split_dataset(to_dataset(make_digits(config.samples, config.data_seed)),
                                           config.validation_fraction, config.split_seed);
  f.train = std::move(train);
  f.validation = std::move(validation);
  f.test = to_dataset(make_digits(config.test_samples, config.test_seed));
  return f;
}

CompositionalClassifier make_digit_classifier(std::size_t side, std::size_t channels,
                                              std::size_t classes) {
  CompositionalClassifier m;
  m.layers.push_back(make_conv_layer("conv1", 1, side, side, channels, 3, Activation::Relu, false));
  m.layers.push_back(
      make_conv_layer("conv2", channels, side, side, channels, 3, Activation::Relu, true));
  m.layers.push_back(
      make_linear_layer("fc", channels * side * side, classes, Activation::Identity));
  m.validate();
  return m;
}

EffectiveWeights magnitude_weights(const CompositionalClassifier& model, std::size_t budget,
                                   std::vector<PermutationResult>* results) {
  EffectiveWeights eff;
  eff.soft.resize(model.layers.size());
  for (const Layer& l : model.layers) {
    if (!l.maskable) {
      eff.weights.push_back(l.weights.values);
      continue;
    }
    const PermutationResult r = permutation_search(l.weights, budget, model.config);
    eff.weights.push_back(permuted_masked_weights(l.weights.values, r));
    if (results) results->push_back(r);
  }
  return eff;
}

EffectiveWeights random_mask_weights(const CompositionalClassifier& model, std::uint64_t seed) {
  std::vector<std::optional<Matrix>> masks;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    if (!l.maskable) {
      masks.emplace_back();
      continue;
    }
    masks.emplace_back(
        random_mask(l.weights.values.rows(), l.weights.values.cols(), model.config, seed, i)
            .to_matrix());
  }
  return masked_weights(model, masks);
}

MaskStats mask_statistics(const BitMask& mask) {
  require_valid_mask(mask);
  const PatternMatrix patterns(mask.config);
  const HardChoice choices = choices_from_mask(mask, patterns);
  MaskStats s;
  s.blocks = mask.block_count();
  s.total = mask.bits.size();
  for (auto b : mask.bits) s.kept += b;
  s.histogram.assign(patterns.count(), 0);
  for (auto i : choices.index) ++s.histogram[i];
  return s;
}

void scale_rows_to(Matrix& w, double norm) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (double v : w.row(r)) s += std::abs(v);
    if (s == 0.0) continue;
    for (double& v : w.row(r)) v *= norm / s;
  }
}

CompositionalClassifier norm_scaled_classifier(std::uint64_t seed) {
  CompositionalClassifier m;
  m.layers.push_back(make_linear_layer("hidden", 4, 4, Activation::Relu));
  m.layers.push_back(make_linear_layer("head", 4, 3, Activation::Identity));
  const CounterRng rng(seed);
  for (std::size_t li = 0; li < 2; ++li) {
    Matrix& w = m.layers[li].weights.values;
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1, 1, li, i);
    scale_rows_to(w, 0.5);
  }
  m.layers[1].bias = {0.12, 0.0, -0.3};
  return m;
}

std::vector<std::vector<double>> ball_samples(std::size_t n, std::size_t dim, std::uint64_t seed) {
  const CounterRng rng(seed);
  std::vector<std::vector<double>> xs;
  for (std::size_t s = 0; s < n; ++s) {
    const double radius = rng.uniform(0, 1, s, 0xa1);
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < dim; ++i) x[i] = radius * rng.uniform(-1, 1, s, i);
    xs.push_back(std::move(x));
  }
  return xs;
}

}  // namespace nmsparse
