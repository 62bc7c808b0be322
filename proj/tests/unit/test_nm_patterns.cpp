#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "nmsparse/nm_patterns.hpp"
#include "nmsparse/sparse_kernel.hpp"

using namespace nmsparse;

namespace {

std::size_t binomial(int n, int k) {
  std::size_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::size_t>(n - k + i) / static_cast<std::size_t>(i);
  return r;
}

// Independent oracle: all k-subsets of {0..m-1} in lexicographic order.
std::vector<std::vector<std::uint8_t>> subsets(int m, int k) {
  std::vector<std::vector<std::uint8_t>> out;
  for (unsigned bits = 0; bits < (1u << m); ++bits) {
    if (std::popcount(bits) != k) continue;
    std::vector<std::uint8_t> v(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) v[static_cast<std::size_t>(i)] = (bits >> i) & 1u;
    out.push_back(v);
  }
  // Lexicographic by kept positions == descending by the bit-vector read MSB first.
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

}  // namespace

TEST(NmConfig, RejectsInvalid) {
  EXPECT_THROW(NmConfig(4, 4), std::invalid_argument);
  EXPECT_THROW(NmConfig(4, 0), std::invalid_argument);
  EXPECT_THROW(NmConfig(9, 2), std::invalid_argument);
  EXPECT_TRUE(NmConfig().is_2_4());
}

TEST(PatternCount, Examples) {
  EXPECT_EQ(pattern_count(NmConfig(4, 2)), 6u);
  EXPECT_EQ(pattern_count(NmConfig(2, 1)), 2u);
}

TEST(EnumeratePatterns, TwoOfFourOrder) {
  const PatternMatrix p = enumerate_patterns(NmConfig(4, 2));
  ASSERT_EQ(p.count(), 6u);
  const std::uint8_t expected[6][4] = {{1, 1, 0, 0}, {1, 0, 1, 0}, {1, 0, 0, 1},
                                       {0, 1, 1, 0}, {0, 1, 0, 1}, {0, 0, 1, 1}};
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.bit(c, i), expected[c][i]);
}

TEST(EnumeratePatterns, OneOfTwo) {
  const PatternMatrix p = enumerate_patterns(NmConfig(2, 1));
  ASSERT_EQ(p.count(), 2u);
  EXPECT_EQ(p.bit(0, 0), 1);
  EXPECT_EQ(p.bit(0, 1), 0);
  EXPECT_EQ(p.bit(1, 1), 1);
}

TEST(EnumeratePatterns, ExhaustiveUpToEight) {
  for (int m = 2; m <= 8; ++m) {
    for (int k = 1; k < m; ++k) {
      const PatternMatrix p = enumerate_patterns(NmConfig(m, k));
      const auto oracle = subsets(m, k);
      ASSERT_EQ(p.count(), binomial(m, k)) << m << ":" << k;
      ASSERT_EQ(p.count(), pattern_count(NmConfig(m, k)));
      ASSERT_EQ(oracle.size(), p.count());
      std::set<std::vector<std::uint8_t>> seen;
      for (std::size_t c = 0; c < p.count(); ++c) {
        std::vector<std::uint8_t> col(p.column(c).begin(), p.column(c).end());
        EXPECT_EQ(col, oracle[c]) << m << ":" << k << " column " << c;
        EXPECT_EQ(std::count(col.begin(), col.end(), 1), k);
        EXPECT_EQ(p.index_of(col), c);
        seen.insert(col);
      }
      EXPECT_EQ(seen.size(), p.count());
    }
  }
}

TEST(EnumeratePatterns, IndexOfRejectsNonKHot) {
  const PatternMatrix p(NmConfig{});
  const std::uint8_t three[4] = {1, 1, 1, 0};
  EXPECT_FALSE(p.index_of(three).has_value());
}

TEST(ValidateMask, Examples) {
  BitMask ok(1, 4, NmConfig{});
  ok.bits = {1, 1, 0, 0};
  EXPECT_FALSE(validate_mask(ok).has_value());

  BitMask bad(1, 4, NmConfig{});
  bad.bits = {1, 1, 1, 0};
  const auto v = validate_mask(bad);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->row, 0u);
  EXPECT_EQ(v->block, 0u);
  EXPECT_EQ(v->popcount, 3);
  EXPECT_THROW(require_valid_mask(bad), std::invalid_argument);

  BitMask two(2, 8, NmConfig{});
  two.bits = {1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 1, 0, 0, 1};
  EXPECT_FALSE(validate_mask(two).has_value());
}

TEST(ValidateMask, ReportsLaterBlock) {
  BitMask m(2, 8, NmConfig{});
  m.bits = {1, 1, 0, 0, 0, 0, 1, 1, 0, 1, 0, 1, 0, 0, 0, 1};
  const auto v = validate_mask(m);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->row, 1u);
  EXPECT_EQ(v->block, 1u);
  EXPECT_EQ(v->popcount, 1);
}

TEST(ValidateMask, RejectsMisalignedShape) {
  BitMask m(1, 6, NmConfig{}, 1);
  EXPECT_TRUE(validate_mask(m).has_value());
}

TEST(ValidateMask, AcceptsAssembledRejectsEveryFlip) {
  for (auto cfg : {NmConfig(4, 2), NmConfig(4, 1), NmConfig(8, 3)}) {
    const BitMask m = random_mask(3, static_cast<std::size_t>(cfg.block_len()) * 3, cfg, 17, 0);
    ASSERT_FALSE(validate_mask(m).has_value());
    for (std::size_t i = 0; i < m.bits.size(); ++i) {
      BitMask f = m;
      f.bits[i] ^= 1;
      EXPECT_TRUE(validate_mask(f).has_value()) << "flip " << i;
    }
  }
}

TEST(Compress, Examples) {
  BitMask m(1, 4, NmConfig{});
  m.bits = {0, 1, 0, 1};
  Compressed24 c = compress(Matrix(1, 4, {1, 2, 3, 4}), m);
  EXPECT_EQ(c.values, (std::vector<double>{2, 4}));
  EXPECT_EQ(c.indices, (std::vector<std::uint8_t>{1, 3}));

  m.bits = {1, 0, 1, 0};
  c = compress(Matrix(1, 4, {5, 0, 7, 0}), m);
  EXPECT_EQ(c.values, (std::vector<double>{5, 7}));
  EXPECT_EQ(c.indices, (std::vector<std::uint8_t>{0, 2}));
}

TEST(Compress, RejectsBadInput) {
  BitMask bad(1, 4, NmConfig{});
  bad.bits = {1, 1, 1, 0};
  EXPECT_THROW(compress(Matrix(1, 4), bad), std::invalid_argument);
  BitMask ok(1, 4, NmConfig{});
  ok.bits = {1, 1, 0, 0};
  EXPECT_THROW(compress(Matrix(1, 8), ok), std::invalid_argument);
  BitMask other(1, 4, NmConfig(4, 1));
  other.bits = {1, 0, 0, 0};
  EXPECT_THROW(compress(Matrix(1, 4), other), std::invalid_argument);
}

TEST(Decompress, Examples) {
  Compressed24 c{1, 4, {2, 4}, {1, 3}};
  EXPECT_EQ(decompress(c), Matrix(1, 4, {0, 2, 0, 4}));
  EXPECT_EQ(decompress(Compressed24{}), Matrix());
}

TEST(Decompress, RejectsMalformedIndices) {
  EXPECT_THROW(decompress(Compressed24{1, 4, {2, 4}, {3, 1}}), std::invalid_argument);
  EXPECT_THROW(decompress(Compressed24{1, 4, {2, 4}, {1, 1}}), std::invalid_argument);
  EXPECT_THROW(decompress(Compressed24{1, 4, {2, 4}, {1, 4}}), std::invalid_argument);
  EXPECT_THROW(decompress(Compressed24{1, 4, {2}, {1}}), std::invalid_argument);
}

TEST(Compress, RoundTripIsMaskedProduct) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const Matrix w = random_matrix(8, 8, s, 1);
    const BitMask b = random_mask(8, 8, NmConfig{}, s, 2);
    const Compressed24 c = compress(w, b);
    EXPECT_EQ(c.values.size(), 8u * 8u / 2u);
    const Matrix back = decompress(c);
    const Matrix ref = hadamard(b.to_matrix(), w);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      // Bitwise equality; masked zeros may differ only in sign.
      EXPECT_TRUE(back.data()[i] == ref.data()[i]) << i;
    }
  }
}

TEST(Compress, PackedIndicesTwoBitsEach) {
  const Matrix w = random_matrix(4, 16, 3, 0);
  const BitMask b = random_mask(4, 16, NmConfig{}, 3, 1);
  const Compressed24 c = compress(w, b);
  const auto packed = c.packed_indices();
  EXPECT_EQ(packed.size(), (c.indices.size() * 2 + 7) / 8);
  EXPECT_EQ(Compressed24::unpack_indices(packed, c.indices.size()), c.indices);
  // First index in the lowest two bits.
  EXPECT_EQ(packed[0] & 0x3, c.indices[0]);
  EXPECT_EQ((packed[0] >> 2) & 0x3, c.indices[1]);
}

TEST(Compress, PackedLayoutGolden) {
  Compressed24 c{1, 8, {1, 2, 3, 4}, {0, 3, 1, 2}};
  const auto packed = c.packed_indices();
  ASSERT_EQ(packed.size(), 1u);
  EXPECT_EQ(packed[0], 0b10'01'11'00);
}
