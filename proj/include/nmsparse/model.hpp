#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmsparse/conv_engine.hpp"
#include "nmsparse/mask_sampler.hpp"
#include "nmsparse/matrix.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

enum class LayerKind : std::uint8_t { Conv = 0, Linear = 1 };
enum class Activation : std::uint8_t { Identity = 0, Relu = 1 };
enum class ForwardMode { Dense, Soft, Hard };

const char* to_string(ForwardMode mode);
ForwardMode parse_forward_mode(const std::string& text);

/// One f_i(x) = act(W_i x + b_i). Conv layers hold the unfolded weight
/// matrix (c_out x c_in*kh*kw, possibly widened by structural-zero columns)
/// and one bias per output channel; linear layers hold out x in weights.
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Linear;
  Activation activation = Activation::Relu;

  // Conv geometry; input is in_channels x height x width.
  std::size_t in_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;

  WeightMatrix weights;
  std::vector<double> bias;

  bool maskable = false;
  std::optional<MaskLogits> logits;
  std::optional<FrozenMask> frozen;

  std::size_t out_channels() const { return weights.values.rows(); }
  std::size_t input_size() const;
  std::size_t output_size() const;
};

Layer make_conv_layer(std::string name, std::size_t in_channels, std::size_t height,
                      std::size_t width, std::size_t out_channels, std::size_t kernel,
                      Activation activation, bool maskable);
Layer make_linear_layer(std::string name, std::size_t in_features, std::size_t out_features,
                        Activation activation);

/// softmax(f_d(...f_1(x))).
class CompositionalClassifier {
 public:
  NmConfig config;
  std::vector<Layer> layers;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().input_size(); }
  std::size_t num_classes() const;

  /// Throws std::invalid_argument if consecutive shapes do not compose.
  void validate() const;

  /// He-uniform weights, zero biases, seeded.
  void init_weights(std::uint64_t seed);

  /// Attaches Glorot-initialized MaskLogits to every maskable layer.
  void init_mask_logits(double temperature, std::uint64_t seed);

  bool has_logits() const;
  bool has_frozen_masks() const;
};

/// Per-layer Gumbel noise for the maskable layers (empty entries elsewhere).
using MaskNoise = std::vector<std::optional<GumbelNoise>>;

MaskNoise zero_noise(const CompositionalClassifier& model);
MaskNoise sample_noise(const CompositionalClassifier& model, std::uint64_t seed,
                       std::uint64_t counter);

/// Weight matrices actually multiplied in a given mode, plus the soft
/// choices needed to backpropagate into the mask logits.
struct EffectiveWeights {
  std::vector<Matrix> weights;
  std::vector<std::optional<SoftChoice>> soft;
};

/// Dense uses W, soft uses (D z) ⊙ W with z from gs_soft_sample, hard uses
/// the frozen BitMask ⊙ W. Throws if masks needed by the mode are missing.
EffectiveWeights effective_weights(const CompositionalClassifier& model, ForwardMode mode,
                                   const MaskNoise* noise = nullptr);

/// Effective weights from explicit per-layer real-valued masks (nullopt
/// means the layer is used unmasked).
EffectiveWeights masked_weights(const CompositionalClassifier& model,
                                const std::vector<std::optional<Matrix>>& masks);

/// Pre-softmax scores of the last layer.
std::vector<double> forward_logits(const CompositionalClassifier& model,
                                   const EffectiveWeights& eff, std::span<const double> x);

std::vector<double> softmax(std::span<const double> scores);

/// Class probabilities. Soft mode uses `noise` (zero noise when null).
std::vector<double> forward(const CompositionalClassifier& model, std::span<const double> x,
                            ForwardMode mode, const MaskNoise* noise = nullptr);

std::vector<double> forward(const CompositionalClassifier& model, const EffectiveWeights& eff,
                            std::span<const double> x);

/// -log(max(p_label, 1e-12)).
double cross_entropy(std::span<const double> probs, std::size_t label);

/// d cross_entropy / d probs; zero except at the label.
std::vector<double> cross_entropy_grad(std::span<const double> probs, std::size_t label);

/// Normalized inputs and labels, one sample per row.
struct Dataset {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 10;
  std::vector<double> inputs;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return channels * height * width; }
  std::span<const double> sample(std::size_t i) const {
    return {inputs.data() + i * features(), features()};
  }

  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Deterministic shuffle-then-split into (train, validation).
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double validation_fraction,
                                          std::uint64_t seed);

/// Gradients of the mean cross-entropy over a batch.
struct BatchGradients {
  double loss = 0.0;
  std::vector<Matrix> weights;             // dL/dW_eff per layer
  std::vector<std::vector<double>> bias;   // dL/db per layer
};

/// Reverse-mode pass through every layer for the listed samples. Returns
/// gradients with respect to the effective weights and the biases.
BatchGradients backprop(const CompositionalClassifier& model, const EffectiveWeights& eff,
                        const Dataset& data, std::span<const std::size_t> batch);

struct LogitGradients {
  double loss = 0.0;
  std::vector<std::vector<double>> logits;  // empty for layers without MaskLogits
};

/// Soft-mode gradient of the mean batch cross-entropy with respect to every
/// mask logit, with a fixed noise draw. Pretrained weights are read only.
LogitGradients grads_wrt_logits(const CompositionalClassifier& model, const Dataset& data,
                                std::span<const std::size_t> batch, const MaskNoise& noise);

/// Fraction of samples whose label ranks in the top k (ties by class index).
double evaluate_topk(const CompositionalClassifier& model, const Dataset& data, std::size_t k,
                     ForwardMode mode);

struct Accuracy {
  double top1 = 0.0;
  double top5 = 0.0;
};

Accuracy evaluate(const CompositionalClassifier& model, const Dataset& data, ForwardMode mode);
Accuracy evaluate(const CompositionalClassifier& model, const EffectiveWeights& eff,
                  const Dataset& data);

/// True if `label` is among the k largest entries of `probs`, ranking ties
/// by ascending class index.
bool in_top_k(std::span<const double> probs, std::size_t label, std::size_t k);

}  // namespace nmsparse
