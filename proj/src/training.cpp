#include "nmsparse/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "nmsparse/rng.hpp"

namespace nmsparse {

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !(momentum > 0) || momentum >= 1 || !(beta2 > 0) || beta2 >= 1 ||
      !(epsilon > 0) || weight_decay < 0 || step_epochs == 0 || epochs == 0 || batch_size == 0) {
    throw std::invalid_argument("TrainConfig: rates, epochs and batch size must be positive");
  }
  if (!(gamma > 0) || gamma > 1) throw std::invalid_argument("TrainConfig: gamma must be in (0, 1]");
  if (!(temperature >= 1e-3)) throw std::invalid_argument("TrainConfig: temperature must be >= 1e-3");
  if (anneal_temperature && !(anneal_start >= temperature)) {
    throw std::invalid_argument("TrainConfig: anneal start below final temperature");
  }
}

void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                const TrainConfig& config, double learning_rate) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw std::invalid_argument("adamw_step: state shapes do not match");
  }
  ++state.step;
  const double b1 = config.momentum;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - learning_rate * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] = params[i] * decay - learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
  }
}

double lr_schedule(std::size_t epoch, const TrainConfig& config) {
  return config.learning_rate *
         std::pow(config.gamma, static_cast<double>(epoch / config.step_epochs));
}

double temperature_schedule(std::size_t epoch, const TrainConfig& config) {
  if (!config.anneal_temperature || config.epochs <= 1) return config.temperature;
  const double t = static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
  return config.anneal_start * std::pow(config.temperature / config.anneal_start, t);
}

TrainingDiverged::TrainingDiverged(std::size_t e, std::size_t b, std::vector<MaskLogits> s)
    : std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(e) +
                         ", batch " + std::to_string(b)),
      epoch(e),
      batch(b),
      snapshot(std::move(s)) {}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  const CounterRng rng(seed);
  for (std::size_t i = count; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i, 0x65706f6368ULL, epoch, i)]);
  }
  return order;
}

namespace {

double mean_entropy(const CompositionalClassifier& model) {
  double total = 0.0;
  std::size_t n = 0;
  for (const Layer& l : model.layers) {
    if (!l.logits) continue;
    total += mean_choice_entropy(*l.logits) * static_cast<double>(l.logits->block_count());
    n += l.logits->block_count();
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

void freeze_all(CompositionalClassifier& model, const TrainConfig& config) {
  const PatternMatrix patterns(model.config);
  for (Layer& l : model.layers) {
    if (l.logits) l.frozen = freeze(*l.logits, patterns, config.freeze_mode, config.freeze_seed);
  }
}

}  // namespace

TrainHistory train_masks(CompositionalClassifier& model, const Dataset& train,
                         const Dataset& validation, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (train.size() == 0) throw std::invalid_argument("train_masks: empty training set");
  if (!model.has_logits()) model.init_mask_logits(config.temperature, config.seed);

  std::vector<AdamState> states;
  for (const Layer& l : model.layers) states.emplace_back(l.logits ? l.logits->logits.size() : 0);

  TrainHistory history;
  std::uint64_t batch_counter = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, config);
    const double tau = temperature_schedule(epoch, config);
    for (Layer& l : model.layers)
      if (l.logits) l.logits->temperature = tau;

    const std::vector<std::size_t> order = epoch_order(train.size(), config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batches) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      // Fresh noise for every batch.
      const MaskNoise noise = sample_noise(model, config.seed, batch_counter++);
      LogitGradients g;
      try {
        g = grads_wrt_logits(model, train, batch, noise);
      } catch (const std::runtime_error&) {
        g.loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(g.loss)) {
        std::vector<MaskLogits> snapshot;
        for (const Layer& l : model.layers)
          if (l.logits) snapshot.push_back(*l.logits);
        throw TrainingDiverged(epoch, batches, std::move(snapshot));
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
      for (std::size_t li = 0; li < model.layers.size(); ++li) {
        Layer& l = model.layers[li];
        if (!l.logits) continue;
        adamw_step(l.logits->logits, g.logits[li], states[li], config, lr);
      }
    }

    freeze_all(model, config);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(train.size());
    const Accuracy acc = evaluate(model, validation, ForwardMode::Hard);
    rec.top1 = acc.top1;
    rec.top5 = acc.top5;
    rec.mean_entropy = mean_entropy(model);
    rec.learning_rate = lr;
    rec.temperature = tau;
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  freeze_all(model, config);
  return history;
}

TrainHistory train_dense(CompositionalClassifier& model, const Dataset& train,
                         const Dataset& validation, const DenseTrainConfig& config,
                         const EpochCallback& on_epoch) {
  model.validate();
  if (train.size() == 0) throw std::invalid_argument("train_dense: empty training set");
  TrainConfig opt;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;

  std::vector<AdamState> wstate;
  std::vector<AdamState> bstate;
  for (const Layer& l : model.layers) {
    wstate.emplace_back(l.weights.values.size());
    bstate.emplace_back(l.bias.size());
  }
  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(train.size(), config.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const EffectiveWeights eff = effective_weights(model, ForwardMode::Dense);
      const BatchGradients g = backprop(model, eff, train, batch);
      if (!std::isfinite(g.loss)) throw std::runtime_error("train_dense: non-finite loss");
      loss_sum += g.loss * static_cast<double>(batch.size());
      for (std::size_t li = 0; li < model.layers.size(); ++li) {
        Layer& l = model.layers[li];
        adamw_step(l.weights.values.data(), g.weights[li].data(), wstate[li], opt,
                   config.learning_rate);
        adamw_step(l.bias, g.bias[li], bstate[li], opt, config.learning_rate);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / static_cast<double>(train.size());
    const Accuracy acc = evaluate(model, validation, ForwardMode::Dense);
    rec.top1 = acc.top1;
    rec.top5 = acc.top5;
    rec.learning_rate = config.learning_rate;
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace nmsparse
