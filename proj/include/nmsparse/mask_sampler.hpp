#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nmsparse/matrix.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

/// Per-block unnormalized log choice weights (log pi) over the pattern
/// columns of one layer, plus the Gumbel-Softmax temperature.
struct MaskLogits {
  std::size_t rows = 0;
  std::size_t padded_cols = 0;
  NmConfig config;
  std::size_t patterns = 0;     // pattern_count(config)
  std::vector<double> logits;   // block_count() x patterns, row-major
  double temperature = 0.1;
  std::uint64_t layer_id = 0;   // RNG stream key

  MaskLogits() = default;
  MaskLogits(std::size_t rows, std::size_t padded_cols, NmConfig config, double temperature,
             std::uint64_t layer_id = 0);

  std::size_t block_count() const {
    return rows * (padded_cols / static_cast<std::size_t>(config.block_len()));
  }
  double* block(std::size_t b) { return logits.data() + b * patterns; }
  const double* block(std::size_t b) const { return logits.data() + b * patterns; }

  /// Throws std::invalid_argument if shapes or temperature are inconsistent.
  void validate() const;
};

/// Glorot-uniform init of every block's n-vector (fan-in = fan-out = n).
MaskLogits glorot_logits(std::size_t rows, std::size_t padded_cols, NmConfig config,
                         double temperature, std::uint64_t seed, std::uint64_t layer_id = 0);

struct GumbelNoise {
  std::size_t block_count = 0;
  std::size_t patterns = 0;
  std::vector<double> values;

  static GumbelNoise zeros(std::size_t block_count, std::size_t patterns) {
    return {block_count, patterns, std::vector<double>(block_count * patterns, 0.0)};
  }
};

/// g = -log(-log u).
double gumbel_from_uniform(double u);

/// Gumbel(0,1) draws keyed by (stream, block, slot, counter) under `seed`.
GumbelNoise sample_gumbel(std::size_t block_count, std::size_t patterns, std::uint64_t seed,
                          std::uint64_t stream = 0, std::uint64_t counter = 0);

/// Per-block relaxed choice vectors on the simplex.
struct SoftChoice {
  std::size_t block_count = 0;
  std::size_t patterns = 0;
  std::vector<double> z;
  const double* block(std::size_t b) const { return z.data() + b * patterns; }
};

/// Per-block selected pattern index.
struct HardChoice {
  std::size_t patterns = 0;
  std::vector<std::uint32_t> index;
};

/// softmax((g + log pi) / tau) per block, max-shifted before exponentiation.
SoftChoice gs_soft_sample(const MaskLogits& logits, const GumbelNoise& noise);

/// onehot(argmax(g + log pi)) per block; ties go to the lowest index.
HardChoice gs_hard_sample(const MaskLogits& logits, const GumbelNoise& noise);

/// Vector-Jacobian product of gs_soft_sample: given dL/dz for every block,
/// returns dL/d(log pi) with the same layout as MaskLogits::logits.
std::vector<double> gs_soft_backward(const SoftChoice& soft, double temperature,
                                     const std::vector<double>& grad_z);

/// Block b of the result is D z_b laid out along its row.
Matrix assemble_soft_mask(const SoftChoice& soft, const PatternMatrix& patterns, std::size_t rows,
                          std::size_t cols);

BitMask assemble_hard_mask(const HardChoice& hard, const PatternMatrix& patterns,
                           std::size_t rows, std::size_t cols);

/// dL/dz_b = D^T (dL/dS restricted to block b).
std::vector<double> soft_mask_backward(const Matrix& grad_mask, const PatternMatrix& patterns);

/// Reads the chosen pattern index back out of every block of a valid mask.
HardChoice choices_from_mask(const BitMask& mask, const PatternMatrix& patterns);

enum class FreezeMode : std::uint8_t { Deterministic = 0, Stochastic = 1 };

struct FrozenMask {
  BitMask mask;
  HardChoice choices;
  FreezeMode mode = FreezeMode::Deterministic;
  std::uint64_t seed = 0;
};

/// Final draw: argmax log pi per block (deterministic) or one Gumbel-Max
/// sample per block under `seed` (stochastic).
FrozenMask freeze(const MaskLogits& logits, const PatternMatrix& patterns, FreezeMode mode,
                  std::uint64_t seed = 0);

/// Mean per-block entropy (nats) of softmax(log pi).
double mean_choice_entropy(const MaskLogits& logits);

}  // namespace nmsparse
