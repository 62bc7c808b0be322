#include "nmsparse/nm_patterns.hpp"

#include <algorithm>
#include <stdexcept>

namespace nmsparse {

std::size_t pattern_count(const NmConfig& config) {
  std::size_t n = 1;
  const auto m = static_cast<std::size_t>(config.block_len());
  const auto k = static_cast<std::size_t>(config.kept());
  for (std::size_t i = 1; i <= k; ++i) n = n * (m - k + i) / i;
  return n;
}

PatternMatrix::PatternMatrix(const NmConfig& config) : config_(config) {
  const std::size_t m = block_len();
  const auto k = static_cast<std::size_t>(config.kept());
  // Walk K-subsets of {0..M-1} in lexicographic order.
  std::vector<std::size_t> pick(k);
  for (std::size_t i = 0; i < k; ++i) pick[i] = i;
  while (true) {
    std::vector<std::uint8_t> col(m, 0);
    for (std::size_t p : pick) col[p] = 1;
    bits_.insert(bits_.end(), col.begin(), col.end());
    ++count_;
    std::size_t i = k;
    while (i > 0 && pick[i - 1] == m - k + (i - 1)) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
}

std::optional<std::size_t> PatternMatrix::index_of(std::span<const std::uint8_t> bits) const {
  if (bits.size() != block_len()) return std::nullopt;
  for (std::size_t p = 0; p < count_; ++p) {
    if (std::equal(bits.begin(), bits.end(), column(p).begin())) return p;
  }
  return std::nullopt;
}

PatternMatrix enumerate_patterns(const NmConfig& config) { return PatternMatrix(config); }

Matrix BitMask::to_matrix() const {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < bits.size(); ++i) m.data()[i] = bits[i];
  return m;
}

std::optional<MaskViolation> validate_mask(const BitMask& mask) {
  const auto m = static_cast<std::size_t>(mask.config.block_len());
  if (mask.bits.size() != mask.rows * mask.cols) {
    return MaskViolation{0, 0, 0, "bit count does not match rows*cols"};
  }
  if (mask.cols % m != 0) {
    return MaskViolation{0, 0, 0,
                         "cols " + std::to_string(mask.cols) + " not a multiple of " +
                             std::to_string(m)};
  }
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t b = 0; b < mask.cols / m; ++b) {
      int ones = 0;
      for (std::size_t j = 0; j < m; ++j) {
        const std::uint8_t v = mask(r, b * m + j);
        if (v > 1) {
          return MaskViolation{r, b, -1, "non-binary entry in block"};
        }
        ones += v;
      }
      if (ones != mask.config.kept()) {
        return MaskViolation{r, b, ones,
                             "block (" + std::to_string(r) + ", " + std::to_string(b) + ") has " +
                                 std::to_string(ones) + " ones, expected " +
                                 std::to_string(mask.config.kept())};
      }
    }
  }
  return std::nullopt;
}

void require_valid_mask(const BitMask& mask) {
  if (auto v = validate_mask(mask)) throw std::invalid_argument("invalid N:M mask: " + v->message);
}

std::vector<std::uint8_t> Compressed24::packed_indices() const {
  std::vector<std::uint8_t> out((indices.size() + 3) / 4, 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    out[i / 4] |= static_cast<std::uint8_t>((indices[i] & 0x3u) << (2 * (i % 4)));
  }
  return out;
}

std::vector<std::uint8_t> Compressed24::unpack_indices(std::span<const std::uint8_t> packed,
                                                       std::size_t count) {
  if (packed.size() * 4 < count) throw std::invalid_argument("unpack_indices: stream too short");
  std::vector<std::uint8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = (packed[i / 4] >> (2 * (i % 4))) & 0x3u;
  return out;
}

Compressed24 compress(const Matrix& dense, const BitMask& mask) {
  if (!mask.config.is_2_4()) throw std::invalid_argument("compress: mask is not 2:4");
  if (dense.rows() != mask.rows || dense.cols() != mask.cols) {
    throw std::invalid_argument("compress: dense " + std::to_string(dense.rows()) + "x" +
                                std::to_string(dense.cols()) + " vs mask " +
                                std::to_string(mask.rows) + "x" + std::to_string(mask.cols));
  }
  require_valid_mask(mask);
  Compressed24 c;
  c.rows = dense.rows();
  c.cols = dense.cols();
  c.values.reserve(dense.size() / 2);
  c.indices.reserve(dense.size() / 2);
  for (std::size_t r = 0; r < c.rows; ++r) {
    for (std::size_t col = 0; col < c.cols; ++col) {
      if (mask(r, col)) {
        c.values.push_back(dense(r, col));
        c.indices.push_back(static_cast<std::uint8_t>(col % 4));
      }
    }
  }
  return c;
}

Matrix decompress(const Compressed24& c) {
  if (c.cols % 4 != 0) throw std::invalid_argument("decompress: cols not a multiple of 4");
  const std::size_t expected = c.rows * c.cols / 2;
  if (c.values.size() != expected || c.indices.size() != expected) {
    throw std::invalid_argument("decompress: expected " + std::to_string(expected) +
                                " retained values");
  }
  Matrix out(c.rows, c.cols);
  std::size_t k = 0;
  for (std::size_t r = 0; r < c.rows; ++r) {
    for (std::size_t b = 0; b < c.cols / 4; ++b, k += 2) {
      const std::uint8_t i0 = c.indices[k];
      const std::uint8_t i1 = c.indices[k + 1];
      if (i0 >= i1 || i1 > 3) {
        throw std::invalid_argument("decompress: malformed index pair in row " +
                                    std::to_string(r) + ", block " + std::to_string(b));
      }
      out(r, b * 4 + i0) = c.values[k];
      out(r, b * 4 + i1) = c.values[k + 1];
    }
  }
  return out;
}

}  // namespace nmsparse
