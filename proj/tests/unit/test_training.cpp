#include <gtest/gtest.h>

#include "nmsparse/io.hpp"
#include "nmsparse/rng.hpp"
#include "nmsparse/training.hpp"

using namespace nmsparse;

namespace {

// Four features, the label depends on the first two only.
Dataset separable(std::size_t n, std::uint64_t seed) {
  const CounterRng rng(seed);
  Dataset d;
  d.channels = 4;
  d.height = d.width = 1;
  d.num_classes = 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(-1, 1, i, 0);
    const double b = rng.uniform(-1, 1, i, 1);
    d.inputs.insert(d.inputs.end(), {a, b, 0.1 * rng.uniform(-1, 1, i, 2), 0.1 * rng.uniform(-1, 1, i, 3)});
    d.labels.push_back(a - b > 0 ? 1 : 0);
  }
  return d;
}

// A 1x1 conv over a 4-channel 1x1 image: a 2x4 weight matrix, two blocks.
CompositionalClassifier toy() {
  CompositionalClassifier m;
  m.layers.push_back(make_conv_layer("head", 4, 1, 1, 2, 1, Activation::Identity, true));
  m.init_weights(1);
  return m;
}

}  // namespace

TEST(TrainMasks, ToyReachesDenseAccuracy) {
  const Dataset train = separable(400, 1);
  const Dataset val = separable(200, 2);
  CompositionalClassifier m = toy();
  DenseTrainConfig dc;
  dc.learning_rate = 0.05;
  dc.epochs = 10;
  train_dense(m, train, val, dc);
  const double dense = evaluate(m, val, ForwardMode::Dense).top1;
  EXPECT_GT(dense, 0.9);

  TrainConfig tc;
  tc.batch_size = 16;
  tc.seed = 3;
  const TrainHistory h = train_masks(m, train, val, tc);
  ASSERT_EQ(h.epochs.size(), 3u);
  ASSERT_TRUE(m.layers[0].frozen.has_value());
  EXPECT_FALSE(validate_mask(m.layers[0].frozen->mask).has_value());
  EXPECT_GE(evaluate(m, val, ForwardMode::Hard).top1, dense - 0.01);
}

TEST(TrainMasks, WeightsUntouchedAndReproducible) {
  const Dataset train = separable(200, 3);
  const Dataset val = separable(50, 4);
  CompositionalClassifier a = toy();
  CompositionalClassifier b = toy();
  const std::uint32_t before = weights_checksum(a);
  const Matrix w = a.layers[0].weights.values;
  TrainConfig tc;
  tc.seed = 9;
  tc.batch_size = 8;
  const TrainHistory ha = train_masks(a, train, val, tc);
  const TrainHistory hb = train_masks(b, train, val, tc);
  EXPECT_EQ(weights_checksum(a), before);
  EXPECT_EQ(a.layers[0].weights.values, w);
  EXPECT_EQ(a.layers[0].logits->logits, b.layers[0].logits->logits);
  EXPECT_EQ(a.layers[0].frozen->mask, b.layers[0].frozen->mask);
  for (std::size_t e = 0; e < ha.epochs.size(); ++e) EXPECT_EQ(ha.epochs[e].mean_loss, hb.epochs[e].mean_loss);
}

TEST(TrainMasks, RefreezeIsStable) {
  const Dataset train = separable(100, 5);
  CompositionalClassifier m = toy();
  TrainConfig tc;
  tc.freeze_mode = FreezeMode::Stochastic;
  tc.freeze_seed = 77;
  train_masks(m, train, train, tc);
  const FrozenMask again = freeze(*m.layers[0].logits, PatternMatrix(m.config), FreezeMode::Stochastic, 77);
  EXPECT_EQ(again.mask, m.layers[0].frozen->mask);
}

TEST(TrainMasks, RejectsEmptyAndDiverged) {
  CompositionalClassifier m = toy();
  Dataset empty;
  empty.channels = 4;
  empty.height = empty.width = 1;
  EXPECT_THROW(train_masks(m, empty, empty, TrainConfig{}), std::invalid_argument);

  const Dataset train = separable(20, 6);
  m.layers[0].weights.values(0, 0) = std::numeric_limits<double>::infinity();
  try {
    train_masks(m, train, train, TrainConfig{});
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.epoch, 0u);
    EXPECT_EQ(e.snapshot.size(), 1u);
  }
}

TEST(TrainDense, LearnsSeparableData) {
  const Dataset train = separable(300, 7);
  CompositionalClassifier m;
  m.layers.push_back(make_linear_layer("fc", 4, 2, Activation::Identity));
  m.init_weights(2);
  DenseTrainConfig dc;
  dc.learning_rate = 0.05;
  dc.epochs = 10;
  const TrainHistory h = train_dense(m, train, train, dc);
  EXPECT_LT(h.epochs.back().mean_loss, h.epochs.front().mean_loss);
  EXPECT_GT(h.epochs.back().top1, 0.9);
}
