#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmsparse/model.hpp"

namespace nmsparse {

/// Mask-training hyperparameters. Defaults are the large-scale setting:
/// AdamW with lr 1.0, beta1 0.9, decay 1e-4, step decay 0.1 every 3
/// epochs, tau 0.1. RGB inputs at that scale are normalized per channel
/// with kImageNetMean / kImageNetStd.
struct TrainConfig {
  double learning_rate = 1.0;
  double momentum = 0.9;   // AdamW beta1
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  std::size_t step_epochs = 3;
  double gamma = 0.1;
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double temperature = 0.1;
  bool anneal_temperature = false;  // exponential 1.0 -> temperature over the run
  double anneal_start = 1.0;
  std::uint64_t seed = 0;
  FreezeMode freeze_mode = FreezeMode::Deterministic;
  std::uint64_t freeze_seed = 0;

  /// Throws std::invalid_argument on non-positive values or gamma outside (0, 1].
  void validate() const;
};

inline constexpr double kImageNetMean[3] = {0.485, 0.456, 0.406};
inline constexpr double kImageNetStd[3] = {0.229, 0.224, 0.225};

/// First and second moment accumulators for one parameter vector.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// Decoupled weight decay followed by a bias-corrected Adam update:
///   p <- p (1 - lr*wd);  p <- p - lr * mhat / (sqrt(vhat) + eps)
void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                const TrainConfig& config, double learning_rate);

/// lr * gamma^floor(epoch / step_epochs).
double lr_schedule(std::size_t epoch, const TrainConfig& config);

/// Temperature used in `epoch` (constant unless annealing is enabled).
double temperature_schedule(std::size_t epoch, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
  double mean_entropy = 0.0;
  double learning_rate = 0.0;
  double temperature = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Thrown when a batch loss is not finite. Carries the logits at the
/// moment of failure so callers can dump them.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, std::vector<MaskLogits> snapshot);
  std::size_t epoch;
  std::size_t batch;
  std::vector<MaskLogits> snapshot;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Learns masks for every maskable layer over frozen weights, then freezes
/// them (FrozenMask stored on each layer). Initializes logits when absent.
/// Each training sample is visited once per epoch in a seeded order.
TrainHistory train_masks(CompositionalClassifier& model, const Dataset& train,
                         const Dataset& validation, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Hyperparameters for ordinary dense training of the weights, used to
/// produce pretrained fixtures.
struct DenseTrainConfig {
  double learning_rate = 2e-3;
  double weight_decay = 1e-4;
  std::size_t epochs = 4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

TrainHistory train_dense(CompositionalClassifier& model, const Dataset& train,
                         const Dataset& validation, const DenseTrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Seeded visiting order for one epoch (Fisher-Yates).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch);

}  // namespace nmsparse
