#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nmsparse/matrix.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

/// Arithmetic and storage model of one (rows x cols) * (cols x l) product.
struct FlopReport {
  std::uint64_t dense_macs = 0;
  std::uint64_t sparse_macs = 0;
  double ratio = 0.0;
  std::uint64_t bytes_dense = 0;
  std::uint64_t bytes_compressed = 0;  // values at full width + ceil(2 bits per value)
};

/// Throws std::invalid_argument when cols is not a multiple of M.
FlopReport flop_count(std::size_t rows, std::size_t cols, std::size_t l, const NmConfig& config,
                      std::size_t value_bytes = sizeof(double));

/// C = decompress(a) * x computed directly on the compressed form: two MACs
/// per 4-block per output column, blocks visited in ascending order.
/// x.rows() must equal a.cols.
Matrix spmm(const Compressed24& a, const Matrix& x, MacCounter* counter = nullptr);

/// spmm with output rows split across `threads` workers; bitwise identical
/// to the single-threaded result.
Matrix spmm_parallel(const Compressed24& a, const Matrix& x, unsigned threads);

struct BenchShape {
  std::size_t m = 0;  // rows of the sparse operand
  std::size_t k = 0;  // shared dimension, multiple of 4
  std::size_t n = 0;  // columns of the dense operand
};

struct BenchSample {
  BenchShape shape;
  std::string mode;  // "dense" or "sparse"
  std::size_t rep = 0;
  std::uint64_t nanoseconds = 0;
};

struct BenchEntry {
  BenchShape shape;
  FlopReport flops;
  double dense_median_ns = 0.0;
  double dense_min_ns = 0.0;
  double sparse_median_ns = 0.0;
  double sparse_min_ns = 0.0;
  double max_abs_error = 0.0;  // correctness cross-check of the timed data

  double speedup() const { return dense_median_ns / sparse_median_ns; }
  double dense_gmacs() const { return static_cast<double>(flops.dense_macs) / dense_median_ns; }
  double sparse_gmacs() const { return static_cast<double>(flops.sparse_macs) / sparse_median_ns; }
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  std::vector<BenchSample> samples;
  unsigned threads = 1;
  std::size_t reps = 0;

  void write_table(std::ostream& os) const;
  /// Tab-separated, header line "m\tk\tn\tmode\trep\tnanoseconds".
  void write_records(std::ostream& os) const;
};

struct BenchOptions {
  std::size_t reps = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Times dense matmul against spmm on identical seeded data for each
/// shape. Requires reps >= 5 and a non-empty shape list.
BenchReport bench_compare(const std::vector<BenchShape>& shapes, const BenchOptions& options);

/// Seeded random operands shared by the benchmark and its tests.
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, std::uint64_t stream);
BitMask random_mask(std::size_t rows, std::size_t cols, const NmConfig& config, std::uint64_t seed,
                    std::uint64_t stream);

}  // namespace nmsparse
