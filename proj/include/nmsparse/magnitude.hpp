#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nmsparse/conv_engine.hpp"
#include "nmsparse/matrix.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

/// Pattern index (lexicographic order) keeping the K largest |values| of
/// one block; ties go to the lower position. Positions at or past
/// `real_len` are structural and rank below every real position.
std::size_t magnitude_prune_block(std::span<const double> block, const NmConfig& config,
                                  std::size_t real_len);
std::size_t magnitude_prune_block(std::span<const double> block, const NmConfig& config = {});

/// Blockwise magnitude mask. Width must already be a multiple of M.
BitMask magnitude_prune_matrix(const WeightMatrix& w, const NmConfig& config = {});

/// Retained-magnitude fraction sum|W ⊙ B| / sum|W|; 1 for an all-zero W.
/// This is a surrogate score, not the external library's definition.
double efficacy_score(const Matrix& w, const BitMask& mask);

/// Column permutation of the weight matrix input dimension: permuted
/// column c holds original column `order[c]`.
struct PermutationPlan {
  std::vector<std::size_t> order;
  std::vector<std::size_t> inverse;
  double score_before = 0.0;
  double score_after = 0.0;
  std::size_t evaluations = 0;
  std::size_t swaps = 0;

  bool is_identity() const;
};

struct PermutationResult {
  PermutationPlan plan;
  BitMask mask;  // magnitude mask of the permuted matrix
};

Matrix permute_columns(const Matrix& w, std::span<const std::size_t> order);
Matrix unpermute_columns(const Matrix& w, std::span<const std::size_t> order);

/// Greedy search over swaps of two real columns in different blocks: each
/// round scans all pairs and applies the single best strictly-improving
/// swap (ties: lowest pair). Stops when no swap improves or after `budget`
/// swap evaluations. Structural columns stay in place.
PermutationResult permutation_search(const WeightMatrix& w, std::size_t budget,
                                     const NmConfig& config = {});

/// Masked weights mapped back to the original column order, i.e. the
/// matrix a permuted deployment effectively applies to unpermuted inputs.
Matrix permuted_masked_weights(const Matrix& w, const PermutationResult& result);

}  // namespace nmsparse
