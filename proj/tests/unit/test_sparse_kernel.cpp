#include <gtest/gtest.h>

#include <sstream>

#include "nmsparse/sparse_kernel.hpp"

using namespace nmsparse;

TEST(FlopCount, Examples) {
  const FlopReport r = flop_count(4, 8, 16, NmConfig{});
  EXPECT_EQ(r.dense_macs, 512u);
  EXPECT_EQ(r.sparse_macs, 256u);
  EXPECT_EQ(r.ratio, 2.0);
  const FlopReport big = flop_count(64, 64 * 9, 56 * 56, NmConfig{});
  EXPECT_EQ(big.ratio, 2.0);
  EXPECT_THROW(flop_count(4, 6, 16, NmConfig{}), std::invalid_argument);
}

TEST(FlopCount, ByteModel) {
  const FlopReport r = flop_count(4, 8, 16, NmConfig{});
  EXPECT_EQ(r.bytes_dense, 4u * 8u * 8u);
  // 16 retained doubles plus 16 two-bit indices.
  EXPECT_EQ(r.bytes_compressed, 16u * 8u + 4u);
  const FlopReport other = flop_count(3, 8, 2, NmConfig(8, 3));
  EXPECT_EQ(other.sparse_macs, 3u * 8u * 2u * 3u / 8u);
}

TEST(Spmm, IdentityRightMultiply) {
  BitMask m(1, 4, NmConfig{});
  m.bits = {1, 0, 1, 0};
  const Compressed24 a = compress(Matrix(1, 4, {1, 2, 3, 4}), m);
  Matrix eye(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  EXPECT_EQ(spmm(a, eye), Matrix(1, 4, {1, 0, 3, 0}));
}

TEST(Spmm, ZeroInputAndMismatch) {
  const Compressed24 a = compress(random_matrix(4, 8, 1, 0), random_mask(4, 8, NmConfig{}, 1, 1));
  const Matrix zero = spmm(a, Matrix(8, 5));
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(spmm(a, Matrix(7, 5)), std::invalid_argument);
}

TEST(Spmm, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const std::size_t r = 1 + s % 64, k = 4 * (1 + s % 16), n = 1 + (s * 7) % 64;
    const Matrix w = random_matrix(r, k, s, 0);
    const BitMask b = random_mask(r, k, NmConfig{}, s, 1);
    const Matrix x = random_matrix(k, n, s, 2);
    const Matrix ref = matmul(hadamard(b.to_matrix(), w), x);
    const Matrix got = spmm(compress(w, b), x);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_LE(std::abs(ref.data()[i] - got.data()[i]), 1e-12 * std::max(1.0, std::abs(ref.data()[i])));
    }
  }
}

TEST(Spmm, HalfTheMacsOfDense) {
  for (std::uint64_t s = 0; s < 12; ++s) {
    const std::size_t r = 2 + s, k = 4 * (2 + s), n = 3 + 2 * s;
    const Matrix w = random_matrix(r, k, s, 0);
    const BitMask b = random_mask(r, k, NmConfig{}, s, 1);
    const Matrix x = random_matrix(k, n, s, 2);
    MacCounter dense, sparse;
    matmul(w, x, &dense);
    spmm(compress(w, b), x, &sparse);
    EXPECT_EQ(dense.macs, r * k * n);
    EXPECT_EQ(sparse.macs * 2, dense.macs);
    EXPECT_EQ(flop_count(r, k, n, NmConfig{}).sparse_macs, sparse.macs);
  }
}

TEST(Spmm, ParallelIsBitwiseIdentical) {
  const Matrix w = random_matrix(37, 64, 5, 0);
  const BitMask b = random_mask(37, 64, NmConfig{}, 5, 1);
  const Matrix x = random_matrix(64, 29, 5, 2);
  const Compressed24 a = compress(w, b);
  const Matrix one = spmm(a, x);
  for (unsigned t : {1u, 2u, 3u, 8u}) EXPECT_EQ(spmm_parallel(a, x, t), one);
  for (unsigned t : {1u, 2u, 5u}) EXPECT_EQ(matmul_parallel(w, x, t), matmul(w, x));
}

TEST(RandomData, Seeded) {
  EXPECT_EQ(random_matrix(5, 6, 1, 2), random_matrix(5, 6, 1, 2));
  EXPECT_NE(random_matrix(5, 6, 1, 2), random_matrix(5, 6, 1, 3));
  EXPECT_EQ(random_mask(4, 8, NmConfig{}, 3, 0), random_mask(4, 8, NmConfig{}, 3, 0));
}

TEST(Bench, RejectsBadOptions) {
  BenchOptions o;
  o.reps = 1;
  EXPECT_THROW(bench_compare({{4, 8, 4}}, o), std::invalid_argument);
  EXPECT_THROW(bench_compare({}, BenchOptions{}), std::invalid_argument);
}

TEST(Bench, ReportsHalfMacsAndRecords) {
  BenchOptions o;
  o.reps = 5;
  const BenchReport r = bench_compare({{16, 32, 8}, {8, 64, 4}}, o);
  ASSERT_EQ(r.entries.size(), 2u);
  for (const auto& e : r.entries) {
    EXPECT_EQ(e.flops.sparse_macs * 2, e.flops.dense_macs);
    EXPECT_LE(e.max_abs_error, 1e-12);
    EXPECT_GT(e.dense_median_ns, 0.0);
    EXPECT_LE(e.dense_min_ns, e.dense_median_ns);
  }
  EXPECT_EQ(r.samples.size(), 2u * 2u * 5u);
  std::ostringstream rec;
  r.write_records(rec);
  std::istringstream in(rec.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "m\tk\tn\tmode\trep\tnanoseconds");
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 20u);
  std::ostringstream table;
  r.write_table(table);
  EXPECT_NE(table.str().find("speedup"), std::string::npos);
}
