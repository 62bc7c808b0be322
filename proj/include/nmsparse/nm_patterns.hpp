#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nmsparse/matrix.hpp"

namespace nmsparse {

/// Block geometry of an N:M constraint, stored as block length M and the
/// number of kept (non-zero) entries K per block. 2:4 sparsity is M=4, K=2.
class NmConfig {
 public:
  static constexpr int kMaxBlockLen = 8;

  /// Throws std::invalid_argument unless 0 < kept < block_len <= 8.
  constexpr NmConfig(int block_len = 4, int kept = 2) : block_len_(block_len), kept_(kept) {
    if (block_len <= 0 || kept <= 0 || kept >= block_len || block_len > kMaxBlockLen) {
      throw std::invalid_argument("NmConfig: need 0 < K < M <= 8");
    }
  }

  constexpr int block_len() const { return block_len_; }
  constexpr int kept() const { return kept_; }
  constexpr bool is_2_4() const { return block_len_ == 4 && kept_ == 2; }

  friend constexpr bool operator==(const NmConfig&, const NmConfig&) = default;

 private:
  int block_len_;
  int kept_;
};

/// Number of distinct K-of-M keep patterns, C(M, K).
std::size_t pattern_count(const NmConfig& config);

/// Columns of the pattern matrix: every K-hot bit-vector of length M.
/// Column order is lexicographic in the kept positions, i.e. 2:4 gives
/// [1100], [1010], [1001], [0110], [0101], [0011]. Choice indices in mask
/// files refer to this order.
class PatternMatrix {
 public:
  explicit PatternMatrix(const NmConfig& config);

  const NmConfig& config() const { return config_; }
  std::size_t block_len() const { return static_cast<std::size_t>(config_.block_len()); }
  std::size_t count() const { return count_; }

  /// Entry D(pos, pattern) in {0, 1}.
  std::uint8_t bit(std::size_t pattern, std::size_t pos) const {
    return bits_[pattern * block_len() + pos];
  }
  std::span<const std::uint8_t> column(std::size_t pattern) const {
    return {bits_.data() + pattern * block_len(), block_len()};
  }

  /// Index of the column equal to `bits`, or nullopt if it is not K-hot.
  std::optional<std::size_t> index_of(std::span<const std::uint8_t> bits) const;

 private:
  NmConfig config_;
  std::size_t count_ = 0;
  std::vector<std::uint8_t> bits_;
};

PatternMatrix enumerate_patterns(const NmConfig& config);

/// Frozen {0,1} mask over a (column-augmented) weight matrix. Blocks tile
/// each row left to right; cols must be a multiple of M.
struct BitMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;
  NmConfig config;

  BitMask() = default;
  BitMask(std::size_t r, std::size_t c, NmConfig cfg, std::uint8_t fill = 0)
      : rows(r), cols(c), bits(r * c, fill), config(cfg) {}

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
  std::uint8_t& operator()(std::size_t r, std::size_t c) { return bits[r * cols + c]; }

  std::size_t blocks_per_row() const { return cols / static_cast<std::size_t>(config.block_len()); }
  std::size_t block_count() const { return rows * blocks_per_row(); }

  Matrix to_matrix() const;

  friend bool operator==(const BitMask&, const BitMask&) = default;
};

struct MaskViolation {
  std::size_t row = 0;
  std::size_t block = 0;  // block index within the row
  int popcount = 0;       // 0 when the violation is a shape problem
  std::string message;
};

/// nullopt when every row-major M-block holds exactly K ones; otherwise the
/// first offending block.
std::optional<MaskViolation> validate_mask(const BitMask& mask);

/// Throws std::invalid_argument carrying the violation text.
void require_valid_mask(const BitMask& mask);

/// 2:4 compressed storage: the two retained values of every 4-block plus
/// their 2-bit in-block positions. In memory each index occupies a byte;
/// packed_indices() produces the 2-bit little-endian serialized form.
struct Compressed24 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;          // rows * cols / 2, row-major
  std::vector<std::uint8_t> indices;   // same length, each in [0, 3]

  std::size_t values_per_row() const { return cols / 2; }

  /// Four indices per byte, first index in the lowest two bits.
  std::vector<std::uint8_t> packed_indices() const;
  static std::vector<std::uint8_t> unpack_indices(std::span<const std::uint8_t> packed,
                                                  std::size_t count);
};

Compressed24 compress(const Matrix& dense, const BitMask& mask);

/// Throws std::invalid_argument on a malformed index stream.
Matrix decompress(const Compressed24& c);

}  // namespace nmsparse
