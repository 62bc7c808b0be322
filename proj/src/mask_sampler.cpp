#include "nmsparse/mask_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nmsparse/rng.hpp"

namespace nmsparse {

namespace {

// Counter reserved for the freeze-time draw so it never collides with
// per-batch training noise.
constexpr std::uint64_t kFreezeCounter = 0xf0f0f0f0f0f0f0f0ULL;

void check_shapes(const MaskLogits& logits, const GumbelNoise& noise) {
  logits.validate();
  if (noise.block_count != logits.block_count() || noise.patterns != logits.patterns ||
      noise.values.size() != logits.logits.size()) {
    throw std::invalid_argument("Gumbel noise shape does not match mask logits");
  }
}

}  // namespace

MaskLogits::MaskLogits(std::size_t r, std::size_t pc, NmConfig cfg, double tau, std::uint64_t id)
    : rows(r),
      padded_cols(pc),
      config(cfg),
      patterns(pattern_count(cfg)),
      temperature(tau),
      layer_id(id) {
  if (pc % static_cast<std::size_t>(cfg.block_len()) != 0) {
    throw std::invalid_argument("MaskLogits: padded_cols not a multiple of the block length");
  }
  logits.assign(block_count() * patterns, 0.0);
  validate();
}

void MaskLogits::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("MaskLogits: temperature must be positive");
  }
  if (patterns != pattern_count(config)) {
    throw std::invalid_argument("MaskLogits: pattern count does not match config");
  }
  if (padded_cols % static_cast<std::size_t>(config.block_len()) != 0 ||
      logits.size() != block_count() * patterns) {
    throw std::invalid_argument("MaskLogits: logits length inconsistent with layer shape");
  }
}

MaskLogits glorot_logits(std::size_t rows, std::size_t padded_cols, NmConfig config,
                         double temperature, std::uint64_t seed, std::uint64_t layer_id) {
  MaskLogits out(rows, padded_cols, config, temperature, layer_id);
  const double n = static_cast<double>(out.patterns);
  const double limit = std::sqrt(6.0 / (n + n));
  const CounterRng rng(seed);
  for (std::size_t i = 0; i < out.logits.size(); ++i) {
    out.logits[i] = rng.uniform(-limit, limit, layer_id, i, 0x676c6f72ULL);
  }
  return out;
}

double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

GumbelNoise sample_gumbel(std::size_t block_count, std::size_t patterns, std::uint64_t seed,
                          std::uint64_t stream, std::uint64_t counter) {
  if (block_count == 0 || patterns == 0) {
    throw std::invalid_argument("sample_gumbel: counts must be positive");
  }
  GumbelNoise g{block_count, patterns, std::vector<double>(block_count * patterns)};
  const CounterRng rng(seed);
  for (std::size_t b = 0; b < block_count; ++b) {
    for (std::size_t i = 0; i < patterns; ++i) {
      g.values[b * patterns + i] = gumbel_from_uniform(rng.uniform_open(stream, b, i, counter));
    }
  }
  return g;
}

SoftChoice gs_soft_sample(const MaskLogits& logits, const GumbelNoise& noise) {
  check_shapes(logits, noise);
  const std::size_t n = logits.patterns;
  SoftChoice out{logits.block_count(), n, std::vector<double>(logits.logits.size())};
  const double inv_tau = 1.0 / logits.temperature;
  for (std::size_t b = 0; b < out.block_count; ++b) {
    const double* lp = logits.block(b);
    const double* g = noise.values.data() + b * n;
    double* z = out.z.data() + b * n;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(lp[i])) throw std::invalid_argument("gs_soft_sample: non-finite logit");
      z[i] = (g[i] + lp[i]) * inv_tau;
      peak = std::max(peak, z[i]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = std::exp(z[i] - peak);
      total += z[i];
    }
    for (std::size_t i = 0; i < n; ++i) z[i] /= total;
  }
  return out;
}

HardChoice gs_hard_sample(const MaskLogits& logits, const GumbelNoise& noise) {
  check_shapes(logits, noise);
  const std::size_t n = logits.patterns;
  HardChoice out{n, std::vector<std::uint32_t>(logits.block_count())};
  for (std::size_t b = 0; b < logits.block_count(); ++b) {
    const double* lp = logits.block(b);
    const double* g = noise.values.data() + b * n;
    std::size_t best = 0;
    double best_score = g[0] + lp[0];
    for (std::size_t i = 1; i < n; ++i) {
      const double s = g[i] + lp[i];
      if (s > best_score) {
        best = i;
        best_score = s;
      }
    }
    out.index[b] = static_cast<std::uint32_t>(best);
  }
  return out;
}

std::vector<double> gs_soft_backward(const SoftChoice& soft, double temperature,
                                     const std::vector<double>& grad_z) {
  if (grad_z.size() != soft.z.size()) {
    throw std::invalid_argument("gs_soft_backward: gradient shape mismatch");
  }
  const std::size_t n = soft.patterns;
  std::vector<double> out(soft.z.size());
  for (std::size_t b = 0; b < soft.block_count; ++b) {
    const double* z = soft.z.data() + b * n;
    const double* gz = grad_z.data() + b * n;
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) dot += z[i] * gz[i];
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = z[i] * (gz[i] - dot) / temperature;
  }
  return out;
}

Matrix assemble_soft_mask(const SoftChoice& soft, const PatternMatrix& patterns, std::size_t rows,
                          std::size_t cols) {
  const std::size_t m = patterns.block_len();
  if (cols % m != 0 || rows * (cols / m) != soft.block_count || soft.patterns != patterns.count()) {
    throw std::invalid_argument("assemble_soft_mask: choices do not match layer shape");
  }
  Matrix out(rows, cols);
  for (std::size_t b = 0; b < soft.block_count; ++b) {
    const double* z = soft.block(b);
    double* dst = out.data().data() + b * m;  // blocks tile rows contiguously
    for (std::size_t p = 0; p < soft.patterns; ++p) {
      for (std::size_t j = 0; j < m; ++j) dst[j] += patterns.bit(p, j) * z[p];
    }
  }
  return out;
}

BitMask assemble_hard_mask(const HardChoice& hard, const PatternMatrix& patterns,
                           std::size_t rows, std::size_t cols) {
  const std::size_t m = patterns.block_len();
  if (cols % m != 0 || rows * (cols / m) != hard.index.size()) {
    throw std::invalid_argument("assemble_hard_mask: choices do not match layer shape");
  }
  BitMask out(rows, cols, patterns.config());
  for (std::size_t b = 0; b < hard.index.size(); ++b) {
    if (hard.index[b] >= patterns.count()) {
      throw std::invalid_argument("assemble_hard_mask: pattern index out of range");
    }
    auto col = patterns.column(hard.index[b]);
    std::copy(col.begin(), col.end(), out.bits.begin() + static_cast<std::ptrdiff_t>(b * m));
  }
  return out;
}

std::vector<double> soft_mask_backward(const Matrix& grad_mask, const PatternMatrix& patterns) {
  const std::size_t m = patterns.block_len();
  const std::size_t n = patterns.count();
  if (grad_mask.cols() % m != 0) {
    throw std::invalid_argument("soft_mask_backward: cols not a multiple of the block length");
  }
  const std::size_t blocks = grad_mask.size() / m;
  std::vector<double> out(blocks * n, 0.0);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* gs = grad_mask.data().data() + b * m;
    for (std::size_t p = 0; p < n; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += patterns.bit(p, j) * gs[j];
      out[b * n + p] = s;
    }
  }
  return out;
}

HardChoice choices_from_mask(const BitMask& mask, const PatternMatrix& patterns) {
  require_valid_mask(mask);
  const std::size_t m = patterns.block_len();
  HardChoice out{patterns.count(), std::vector<std::uint32_t>(mask.block_count())};
  for (std::size_t b = 0; b < out.index.size(); ++b) {
    auto idx = patterns.index_of({mask.bits.data() + b * m, m});
    out.index[b] = static_cast<std::uint32_t>(*idx);
  }
  return out;
}

FrozenMask freeze(const MaskLogits& logits, const PatternMatrix& patterns, FreezeMode mode,
                  std::uint64_t seed) {
  const GumbelNoise noise =
      mode == FreezeMode::Deterministic
          ? GumbelNoise::zeros(logits.block_count(), logits.patterns)
          : sample_gumbel(logits.block_count(), logits.patterns, seed, logits.layer_id,
                          kFreezeCounter);
  FrozenMask out;
  out.choices = gs_hard_sample(logits, noise);
  out.mask = assemble_hard_mask(out.choices, patterns, logits.rows, logits.padded_cols);
  out.mode = mode;
  out.seed = mode == FreezeMode::Deterministic ? 0 : seed;
  return out;
}

double mean_choice_entropy(const MaskLogits& logits) {
  const std::size_t n = logits.patterns;
  const std::size_t blocks = logits.block_count();
  if (blocks == 0) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* lp = logits.block(b);
    const double peak = *std::max_element(lp, lp + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(lp[i] - peak);
    const double log_z = std::log(z) + peak;
    double h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double logp = lp[i] - log_z;
      h -= std::exp(logp) * logp;
    }
    total += h;
  }
  return total / static_cast<double>(blocks);
}

}  // namespace nmsparse
