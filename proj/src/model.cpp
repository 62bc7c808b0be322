#include "nmsparse/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nmsparse/rng.hpp"

namespace nmsparse {

const char* to_string(ForwardMode mode) {
  switch (mode) {
    case ForwardMode::Dense: return "dense";
    case ForwardMode::Soft: return "soft";
    case ForwardMode::Hard: return "hard";
  }
  return "?";
}

ForwardMode parse_forward_mode(const std::string& text) {
  if (text == "dense") return ForwardMode::Dense;
  if (text == "soft") return ForwardMode::Soft;
  if (text == "hard") return ForwardMode::Hard;
  throw std::invalid_argument("unknown mode '" + text + "' (expected dense, soft or hard)");
}

std::size_t Layer::input_size() const {
  return kind == LayerKind::Conv ? in_channels * height * width : weights.real_cols;
}

std::size_t Layer::output_size() const {
  return kind == LayerKind::Conv ? out_channels() * height * width : out_channels();
}

Layer make_conv_layer(std::string name, std::size_t in_channels, std::size_t height,
                      std::size_t width, std::size_t out_channels, std::size_t kernel,
                      Activation activation, bool maskable) {
  if (kernel % 2 == 0) throw std::invalid_argument("make_conv_layer: kernel side must be odd");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv;
  l.activation = activation;
  l.in_channels = in_channels;
  l.height = height;
  l.width = width;
  l.kh = kernel;
  l.kw = kernel;
  const std::size_t taps = in_channels * kernel * kernel;
  l.weights = align_weight_matrix(Matrix(out_channels, taps), taps, maskable ? 4 : 1);
  l.bias.assign(out_channels, 0.0);
  l.maskable = maskable;
  return l;
}

Layer make_linear_layer(std::string name, std::size_t in_features, std::size_t out_features,
                        Activation activation) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Linear;
  l.activation = activation;
  l.weights = WeightMatrix{Matrix(out_features, in_features), in_features};
  l.bias.assign(out_features, 0.0);
  return l;
}

std::size_t CompositionalClassifier::num_classes() const {
  return layers.empty() ? 0 : layers.back().output_size();
}

void CompositionalClassifier::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + l.name + "): ";
    if (l.weights.real_cols > l.weights.values.cols()) {
      throw std::invalid_argument(where + "real columns exceed weight width");
    }
    if (l.kind == LayerKind::Conv) {
      if (l.kh % 2 == 0 || l.kw % 2 == 0) throw std::invalid_argument(where + "even kernel");
      if (l.weights.real_cols != l.in_channels * l.kh * l.kw) {
        throw std::invalid_argument(where + "weight width does not match kernel taps");
      }
    }
    if (l.bias.size() != l.out_channels()) {
      throw std::invalid_argument(where + "bias length mismatch");
    }
    if (l.maskable) {
      if (l.kind != LayerKind::Conv) throw std::invalid_argument(where + "only conv layers mask");
      if (l.weights.values.cols() % static_cast<std::size_t>(config.block_len()) != 0) {
        throw std::invalid_argument(where + "maskable weight width not block aligned");
      }
    }
    if (l.logits && (!l.maskable || l.logits->rows != l.weights.values.rows() ||
                     l.logits->padded_cols != l.weights.values.cols())) {
      throw std::invalid_argument(where + "mask logits do not match the weight matrix");
    }
    if (l.frozen) {
      if (!l.maskable || l.frozen->mask.rows != l.weights.values.rows() ||
          l.frozen->mask.cols != l.weights.values.cols()) {
        throw std::invalid_argument(where + "frozen mask does not match the weight matrix");
      }
    }
    if (i > 0 && layers[i - 1].output_size() != l.input_size()) {
      throw std::invalid_argument(where + "input size " + std::to_string(l.input_size()) +
                                  " does not match previous output " +
                                  std::to_string(layers[i - 1].output_size()));
    }
  }
}

void CompositionalClassifier::init_weights(std::uint64_t seed) {
  const CounterRng rng(seed);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    Layer& l = layers[li];
    const double limit = std::sqrt(6.0 / static_cast<double>(l.weights.real_cols));
    for (std::size_t r = 0; r < l.weights.values.rows(); ++r)
      for (std::size_t c = 0; c < l.weights.real_cols; ++c)
        l.weights.values(r, c) = rng.uniform(-limit, limit, li, r, c);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void CompositionalClassifier::init_mask_logits(double temperature, std::uint64_t seed) {
  for (std::size_t li = 0; li < layers.size(); ++li) {
    Layer& l = layers[li];
    if (!l.maskable) continue;
    l.logits = glorot_logits(l.weights.values.rows(), l.weights.values.cols(), config, temperature,
                             seed, li);
  }
}

bool CompositionalClassifier::has_logits() const {
  return std::any_of(layers.begin(), layers.end(), [](const Layer& l) { return l.logits.has_value(); });
}

bool CompositionalClassifier::has_frozen_masks() const {
  return std::any_of(layers.begin(), layers.end(), [](const Layer& l) { return l.frozen.has_value(); });
}

MaskNoise zero_noise(const CompositionalClassifier& model) {
  MaskNoise noise(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (const auto& lg = model.layers[i].logits) noise[i] = GumbelNoise::zeros(lg->block_count(), lg->patterns);
  }
  return noise;
}

MaskNoise sample_noise(const CompositionalClassifier& model, std::uint64_t seed,
                       std::uint64_t counter) {
  MaskNoise noise(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (const auto& lg = model.layers[i].logits) {
      noise[i] = sample_gumbel(lg->block_count(), lg->patterns, seed, lg->layer_id, counter);
    }
  }
  return noise;
}

EffectiveWeights effective_weights(const CompositionalClassifier& model, ForwardMode mode,
                                   const MaskNoise* noise) {
  EffectiveWeights eff;
  eff.weights.reserve(model.layers.size());
  eff.soft.resize(model.layers.size());
  const PatternMatrix patterns(model.config);
  MaskNoise zeros;
  if (mode == ForwardMode::Soft && !noise) {
    zeros = zero_noise(model);
    noise = &zeros;
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& l = model.layers[i];
    const Matrix& w = l.weights.values;
    if (mode == ForwardMode::Dense || !l.maskable) {
      eff.weights.push_back(w);
      continue;
    }
    if (mode == ForwardMode::Soft) {
      if (!l.logits) throw std::invalid_argument("soft mode: layer " + l.name + " has no mask logits");
      if (noise->size() != model.layers.size() || !(*noise)[i]) {
        throw std::invalid_argument("soft mode: missing Gumbel noise for layer " + l.name);
      }
      SoftChoice z = gs_soft_sample(*l.logits, *(*noise)[i]);
      eff.weights.push_back(hadamard(assemble_soft_mask(z, patterns, w.rows(), w.cols()), w));
      eff.soft[i] = std::move(z);
    } else {
      if (!l.frozen) throw std::invalid_argument("hard mode: layer " + l.name + " has no frozen mask");
      eff.weights.push_back(hadamard(l.frozen->mask.to_matrix(), w));
    }
  }
  return eff;
}

EffectiveWeights masked_weights(const CompositionalClassifier& model,
                                const std::vector<std::optional<Matrix>>& masks) {
  if (masks.size() != model.layers.size()) {
    throw std::invalid_argument("masked_weights: one entry per layer required");
  }
  EffectiveWeights eff;
  eff.soft.resize(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Matrix& w = model.layers[i].weights.values;
    eff.weights.push_back(masks[i] ? hadamard(*masks[i], w) : w);
  }
  return eff;
}

namespace {

struct LayerTrace {
  Matrix columns;               // conv: unfolded input; linear: unused
  std::vector<double> input;    // linear: input vector
  std::vector<double> pre;      // pre-activation
};

void check_eff(const CompositionalClassifier& model, const EffectiveWeights& eff) {
  if (eff.weights.size() != model.layers.size()) {
    throw std::invalid_argument("effective weights do not match the model depth");
  }
}

// Runs the layer stack, optionally recording what backprop needs.
std::vector<double> run_layers(const CompositionalClassifier& model, const EffectiveWeights& eff,
                               std::span<const double> x, std::vector<LayerTrace>* trace) {
  check_eff(model, eff);
  if (x.size() != model.input_size()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.size()) +
                                " features, model expects " + std::to_string(model.input_size()));
  }
  std::vector<double> act(x.begin(), x.end());
  if (trace) trace->resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const Layer& l = model.layers[li];
    const Matrix& w = eff.weights[li];
    std::vector<double> pre;
    if (l.kind == LayerKind::Conv) {
      UnfoldedInput u = unfold(Tensor3(l.in_channels, l.height, l.width, std::move(act)), l.kh, l.kw);
      Tensor3 y = conv_matmul(w, u);
      const std::size_t positions = l.height * l.width;
      for (std::size_t o = 0; o < y.channels; ++o)
        for (std::size_t p = 0; p < positions; ++p) y.data[o * positions + p] += l.bias[o];
      pre = std::move(y.data);
      if (trace) (*trace)[li].columns = std::move(u.columns);
    } else {
      pre.assign(w.rows(), 0.0);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        double acc = 0.0;
        const double* wr = w.row(o).data();
        for (std::size_t k = 0; k < l.weights.real_cols; ++k) acc += wr[k] * act[k];
        pre[o] = acc + l.bias[o];
      }
      if (trace) (*trace)[li].input = std::move(act);
    }
    act = pre;
    if (l.activation == Activation::Relu) {
      for (double& v : act) v = v > 0.0 ? v : 0.0;
    }
    if (trace) (*trace)[li].pre = std::move(pre);
  }
  return act;
}

}  // namespace

std::vector<double> forward_logits(const CompositionalClassifier& model,
                                   const EffectiveWeights& eff, std::span<const double> x) {
  return run_layers(model, eff, x, nullptr);
}

std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> p(scores.begin(), scores.end());
  if (p.empty()) return p;
  const double peak = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (double& v : p) {
    v = std::exp(v - peak);
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> forward(const CompositionalClassifier& model, const EffectiveWeights& eff,
                            std::span<const double> x) {
  return softmax(run_layers(model, eff, x, nullptr));
}

std::vector<double> forward(const CompositionalClassifier& model, std::span<const double> x,
                            ForwardMode mode, const MaskNoise* noise) {
  if (model.layers.empty()) return softmax(x);
  return forward(model, effective_weights(model, mode, noise), x);
}

double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return -std::log(std::max(probs[label], 1e-12));
}

std::vector<double> cross_entropy_grad(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw std::invalid_argument("cross_entropy_grad: label out of range");
  std::vector<double> g(probs.size(), 0.0);
  g[label] = probs[label] > 1e-12 ? -1.0 / probs[label] : 0.0;
  return g;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.num_classes = num_classes;
  out.inputs.reserve(indices.size() * features());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto s = sample(i);
    out.inputs.insert(out.inputs.end(), s.begin(), s.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double validation_fraction,
                                          std::uint64_t seed) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const CounterRng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i, 0x73706c6974ULL, i)]);
  }
  const auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(val)};
}

BatchGradients backprop(const CompositionalClassifier& model, const EffectiveWeights& eff,
                        const Dataset& data, std::span<const std::size_t> batch) {
  check_eff(model, eff);
  if (batch.empty()) throw std::invalid_argument("backprop: empty batch");
  const std::size_t depth = model.layers.size();
  BatchGradients g;
  for (std::size_t li = 0; li < depth; ++li) {
    g.weights.emplace_back(eff.weights[li].rows(), eff.weights[li].cols());
    g.bias.emplace_back(model.layers[li].bias.size(), 0.0);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<LayerTrace> trace;

  for (std::size_t idx : batch) {
    const std::vector<double> scores = run_layers(model, eff, data.sample(idx), &trace);
    const std::vector<double> probs = softmax(scores);
    const std::size_t label = data.labels[idx];
    g.loss += cross_entropy(probs, label) * scale;

    // Softmax + cross-entropy: d loss / d scores = p - onehot.
    std::vector<double> grad = probs;
    grad[label] -= 1.0;
    for (double& v : grad) v *= scale;

    for (std::size_t li = depth; li-- > 0;) {
      const Layer& l = model.layers[li];
      const Matrix& w = eff.weights[li];
      const LayerTrace& t = trace[li];
      if (l.activation == Activation::Relu) {
        for (std::size_t i = 0; i < grad.size(); ++i)
          if (t.pre[i] <= 0.0) grad[i] = 0.0;
      }
      Matrix& gw = g.weights[li];
      std::vector<double>& gb = g.bias[li];
      const std::size_t real = l.weights.real_cols;
      if (l.kind == LayerKind::Conv) {
        const std::size_t positions = l.height * l.width;
        for (std::size_t o = 0; o < w.rows(); ++o) {
          const double* go = grad.data() + o * positions;
          double bsum = 0.0;
          for (std::size_t p = 0; p < positions; ++p) bsum += go[p];
          gb[o] += bsum;
          for (std::size_t k = 0; k < real; ++k) {
            const double* uk = t.columns.row(k).data();
            double acc = 0.0;
            for (std::size_t p = 0; p < positions; ++p) acc += go[p] * uk[p];
            gw(o, k) += acc;
          }
        }
        if (li == 0) break;
        Matrix gcols(real, positions);
        for (std::size_t o = 0; o < w.rows(); ++o) {
          const double* go = grad.data() + o * positions;
          for (std::size_t k = 0; k < real; ++k) {
            const double wv = w(o, k);
            if (wv == 0.0) continue;
            double* dst = gcols.row(k).data();
            for (std::size_t p = 0; p < positions; ++p) dst[p] += wv * go[p];
          }
        }
        grad = unfold_adjoint(gcols, l.in_channels, l.height, l.width, l.kh, l.kw).data;
      } else {
        for (std::size_t o = 0; o < w.rows(); ++o) {
          gb[o] += grad[o];
          const double go = grad[o];
          if (go == 0.0) continue;
          double* dst = gw.row(o).data();
          for (std::size_t k = 0; k < real; ++k) dst[k] += go * t.input[k];
        }
        if (li == 0) break;
        std::vector<double> next(real, 0.0);
        for (std::size_t o = 0; o < w.rows(); ++o) {
          const double go = grad[o];
          if (go == 0.0) continue;
          const double* wr = w.row(o).data();
          for (std::size_t k = 0; k < real; ++k) next[k] += wr[k] * go;
        }
        grad = std::move(next);
      }
    }
  }
  return g;
}

LogitGradients grads_wrt_logits(const CompositionalClassifier& model, const Dataset& data,
                                std::span<const std::size_t> batch, const MaskNoise& noise) {
  for (const Layer& l : model.layers) {
    if (l.logits && l.logits->temperature < 1e-3) {
      throw std::invalid_argument("grads_wrt_logits: temperature below 1e-3");
    }
  }
  const EffectiveWeights eff = effective_weights(model, ForwardMode::Soft, &noise);
  const BatchGradients g = backprop(model, eff, data, batch);
  if (!std::isfinite(g.loss)) throw std::runtime_error("grads_wrt_logits: non-finite loss");
  const PatternMatrix patterns(model.config);
  LogitGradients out;
  out.loss = g.loss;
  out.logits.resize(model.layers.size());
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const Layer& l = model.layers[li];
    if (!l.logits) continue;
    const Matrix grad_mask = hadamard(g.weights[li], l.weights.values);
    out.logits[li] = gs_soft_backward(*eff.soft[li], l.logits->temperature,
                                      soft_mask_backward(grad_mask, patterns));
  }
  return out;
}

bool in_top_k(std::span<const double> probs, std::size_t label, std::size_t k) {
  std::size_t rank = 0;
  const double pl = probs[label];
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (probs[c] > pl || (probs[c] == pl && c < label)) ++rank;
  }
  return rank < k;
}

Accuracy evaluate(const CompositionalClassifier& model, const EffectiveWeights& eff,
                  const Dataset& data) {
  if (data.size() == 0) return {};
  std::size_t hit1 = 0;
  std::size_t hit5 = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = forward(model, eff, data.sample(i));
    hit1 += in_top_k(probs, data.labels[i], 1);
    hit5 += in_top_k(probs, data.labels[i], 5);
  }
  const auto n = static_cast<double>(data.size());
  return {static_cast<double>(hit1) / n, static_cast<double>(hit5) / n};
}

Accuracy evaluate(const CompositionalClassifier& model, const Dataset& data, ForwardMode mode) {
  return evaluate(model, effective_weights(model, mode), data);
}

double evaluate_topk(const CompositionalClassifier& model, const Dataset& data, std::size_t k,
                     ForwardMode mode) {
  if (k == 0 || k > model.num_classes()) throw std::invalid_argument("evaluate_topk: bad k");
  if (data.size() == 0) return 0.0;
  const EffectiveWeights eff = effective_weights(model, mode);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    hits += in_top_k(forward(model, eff, data.sample(i)), data.labels[i], k);
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace nmsparse
