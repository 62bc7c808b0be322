#include "nmsparse/magnitude.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nmsparse {

std::size_t magnitude_prune_block(std::span<const double> block, const NmConfig& config,
                                  std::size_t real_len) {
  const auto m = static_cast<std::size_t>(config.block_len());
  if (block.size() != m) throw std::invalid_argument("magnitude_prune_block: wrong block length");
  std::vector<std::size_t> pos(m);
  std::iota(pos.begin(), pos.end(), 0);
  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    const bool ra = a < real_len;
    const bool rb = b < real_len;
    if (ra != rb) return ra;
    return std::abs(block[a]) > std::abs(block[b]);
  });
  std::vector<std::uint8_t> bits(m, 0);
  for (int i = 0; i < config.kept(); ++i) bits[pos[static_cast<std::size_t>(i)]] = 1;
  return *PatternMatrix(config).index_of(bits);
}

std::size_t magnitude_prune_block(std::span<const double> block, const NmConfig& config) {
  return magnitude_prune_block(block, config, block.size());
}

namespace {

// Retained magnitude of one block: sum of the K largest |v| among real positions.
double kept_magnitude(const double* v, std::size_t m, int k) {
  double buf[NmConfig::kMaxBlockLen];
  for (std::size_t i = 0; i < m; ++i) buf[i] = std::abs(v[i]);
  std::partial_sort(buf, buf + k, buf + m, std::greater<>());
  double s = 0.0;
  for (int i = 0; i < k; ++i) s += buf[i];
  return s;
}

BitMask magnitude_mask(const Matrix& w, std::size_t real_cols, const NmConfig& config) {
  const auto m = static_cast<std::size_t>(config.block_len());
  if (w.cols() % m != 0) {
    throw std::invalid_argument("magnitude_prune_matrix: width " + std::to_string(w.cols()) +
                                " not a multiple of " + std::to_string(m));
  }
  const PatternMatrix patterns(config);
  BitMask mask(w.rows(), w.cols(), config);
  for (std::size_t r = 0; r < w.rows(); ++r) {
    for (std::size_t b = 0; b < w.cols() / m; ++b) {
      const std::size_t start = b * m;
      const std::size_t real = real_cols > start ? std::min(m, real_cols - start) : 0;
      const std::size_t p =
          magnitude_prune_block({w.row(r).data() + start, m}, config, real);
      auto col = patterns.column(p);
      std::copy(col.begin(), col.end(), mask.bits.begin() + static_cast<std::ptrdiff_t>(r * w.cols() + start));
    }
  }
  return mask;
}

}  // namespace

BitMask magnitude_prune_matrix(const WeightMatrix& w, const NmConfig& config) {
  return magnitude_mask(w.values, w.real_cols, config);
}

double efficacy_score(const Matrix& w, const BitMask& mask) {
  if (mask.rows != w.rows() || mask.cols != w.cols()) {
    throw std::invalid_argument("efficacy_score: shape mismatch");
  }
  double total = 0.0;
  double kept = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double a = std::abs(w.data()[i]);
    total += a;
    if (mask.bits[i]) kept += a;
  }
  return total == 0.0 ? 1.0 : kept / total;
}

bool PermutationPlan::is_identity() const {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] != i) return false;
  return true;
}

Matrix permute_columns(const Matrix& w, std::span<const std::size_t> order) {
  if (order.size() != w.cols()) throw std::invalid_argument("permute_columns: size mismatch");
  Matrix out(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) = w(r, order[c]);
  return out;
}

Matrix unpermute_columns(const Matrix& w, std::span<const std::size_t> order) {
  if (order.size() != w.cols()) throw std::invalid_argument("unpermute_columns: size mismatch");
  Matrix out(w.rows(), w.cols());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) out(r, order[c]) = w(r, c);
  return out;
}

PermutationResult permutation_search(const WeightMatrix& w, std::size_t budget,
                                     const NmConfig& config) {
  const auto m = static_cast<std::size_t>(config.block_len());
  const Matrix& src = w.values;
  if (src.cols() % m != 0) throw std::invalid_argument("permutation_search: width not aligned");
  const std::size_t rows = src.rows();
  const std::size_t cols = src.cols();
  const std::size_t blocks = cols / m;
  const std::size_t real = w.real_cols;
  const int k = config.kept();

  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  Matrix cur = src;

  double total = 0.0;
  for (double v : src.data()) total += std::abs(v);

  // Retained magnitude per (row, block).
  std::vector<double> kept(rows * blocks);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t b = 0; b < blocks; ++b)
      kept[r * blocks + b] = kept_magnitude(cur.row(r).data() + b * m, m, k);

  PermutationResult result;
  // Scored the same way as score_after so an empty search reports equal values.
  result.plan.score_before = efficacy_score(src, magnitude_mask(src, real, config));
  std::size_t evaluations = 0;
  bool exhausted = budget == 0;
  double tmp[NmConfig::kMaxBlockLen];

  // Gain of swapping columns a and b, summed over rows.
  auto swap_gain = [&](std::size_t a, std::size_t b) {
    const std::size_t ba = a / m;
    const std::size_t bb = b / m;
    double gain = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = cur.row(r).data();
      std::copy(row + ba * m, row + ba * m + m, tmp);
      tmp[a - ba * m] = row[b];
      gain += kept_magnitude(tmp, m, k) - kept[r * blocks + ba];
      std::copy(row + bb * m, row + bb * m + m, tmp);
      tmp[b - bb * m] = row[a];
      gain += kept_magnitude(tmp, m, k) - kept[r * blocks + bb];
    }
    return gain;
  };

  while (!exhausted) {
    double best_gain = 0.0;
    std::size_t best_a = 0;
    std::size_t best_b = 0;
    bool found = false;
    for (std::size_t a = 0; a < real && !exhausted; ++a) {
      for (std::size_t b = a + 1; b < real; ++b) {
        if (a / m == b / m) continue;
        if (evaluations == budget) {
          exhausted = true;
          break;
        }
        ++evaluations;
        const double g = swap_gain(a, b);
        // Relative threshold keeps round-off from registering as improvement.
        if (g > best_gain && g > 1e-12 * std::max(total, 1.0)) {
          best_gain = g;
          best_a = a;
          best_b = b;
          found = true;
        }
      }
    }
    if (!found) break;
    std::swap(order[best_a], order[best_b]);
    for (std::size_t r = 0; r < rows; ++r) {
      std::swap(cur(r, best_a), cur(r, best_b));
      kept[r * blocks + best_a / m] = kept_magnitude(cur.row(r).data() + (best_a / m) * m, m, k);
      kept[r * blocks + best_b / m] = kept_magnitude(cur.row(r).data() + (best_b / m) * m, m, k);
    }
    ++result.plan.swaps;
  }

  result.plan.order = order;
  result.plan.inverse.assign(cols, 0);
  for (std::size_t c = 0; c < cols; ++c) result.plan.inverse[order[c]] = c;
  result.plan.evaluations = evaluations;
  result.mask = magnitude_mask(cur, real, config);
  result.plan.score_after = efficacy_score(cur, result.mask);
  return result;
}

Matrix permuted_masked_weights(const Matrix& w, const PermutationResult& result) {
  const Matrix permuted = permute_columns(w, result.plan.order);
  return unpermute_columns(hadamard(result.mask.to_matrix(), permuted), result.plan.order);
}

}  // namespace nmsparse
