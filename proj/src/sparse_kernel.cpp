#include "nmsparse/sparse_kernel.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "nmsparse/rng.hpp"

namespace nmsparse {

FlopReport flop_count(std::size_t rows, std::size_t cols, std::size_t l, const NmConfig& config,
                      std::size_t value_bytes) {
  const auto m = static_cast<std::size_t>(config.block_len());
  const auto k = static_cast<std::size_t>(config.kept());
  if (cols % m != 0) {
    throw std::invalid_argument("flop_count: cols " + std::to_string(cols) +
                                " not a multiple of " + std::to_string(m));
  }
  FlopReport r;
  r.dense_macs = static_cast<std::uint64_t>(rows) * cols * l;
  r.sparse_macs = static_cast<std::uint64_t>(rows) * (cols / m) * k * l;
  r.ratio = static_cast<double>(m) / static_cast<double>(k);
  const std::uint64_t kept = static_cast<std::uint64_t>(rows) * (cols / m) * k;
  r.bytes_dense = static_cast<std::uint64_t>(rows) * cols * value_bytes;
  r.bytes_compressed = kept * value_bytes + (kept * 2 + 7) / 8;
  return r;
}

namespace {

void spmm_rows(const Compressed24& a, const Matrix& x, Matrix& c, std::size_t begin,
               std::size_t end) {
  const std::size_t n = x.cols();
  const std::size_t per_row = a.values_per_row();
  for (std::size_t i = begin; i < end; ++i) {
    double* out = c.row(i).data();
    const double* vals = a.values.data() + i * per_row;
    const std::uint8_t* idx = a.indices.data() + i * per_row;
    for (std::size_t v = 0; v < per_row; ++v) {
      const double av = vals[v];
      const double* xrow = x.row((v / 2) * 4 + idx[v]).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += av * xrow[j];
    }
  }
}

void check_spmm(const Compressed24& a, const Matrix& x) {
  if (a.cols != x.rows()) {
    throw std::invalid_argument("spmm: compressed operand has " + std::to_string(a.cols) +
                                " columns, dense operand has " + std::to_string(x.rows()) +
                                " rows");
  }
  if (a.cols % 4 != 0 || a.values.size() != a.rows * a.cols / 2 ||
      a.indices.size() != a.values.size()) {
    throw std::invalid_argument("spmm: malformed compressed operand");
  }
}

}  // namespace

Matrix spmm(const Compressed24& a, const Matrix& x, MacCounter* counter) {
  check_spmm(a, x);
  Matrix c(a.rows, x.cols());
  spmm_rows(a, x, c, 0, a.rows);
  if (counter) counter->macs += static_cast<std::uint64_t>(a.values.size()) * x.cols();
  return c;
}

Matrix spmm_parallel(const Compressed24& a, const Matrix& x, unsigned threads) {
  check_spmm(a, x);
  Matrix c(a.rows, x.cols());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(a.rows, 1))));
  if (threads == 1) {
    spmm_rows(a, x, c, 0, a.rows);
    return c;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (a.rows + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(a.rows, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] { spmm_rows(a, x, c, begin, end); });
  }
  return c;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, std::uint64_t stream) {
  const CounterRng rng(seed);
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0, stream, i);
  return m;
}

BitMask random_mask(std::size_t rows, std::size_t cols, const NmConfig& config, std::uint64_t seed,
                    std::uint64_t stream) {
  const PatternMatrix patterns(config);
  const auto m = static_cast<std::size_t>(config.block_len());
  if (cols % m != 0) throw std::invalid_argument("random_mask: cols not a multiple of M");
  const CounterRng rng(seed);
  BitMask mask(rows, cols, config);
  for (std::size_t b = 0; b < rows * cols / m; ++b) {
    const auto p = rng.below(patterns.count(), stream, b);
    auto col = patterns.column(p);
    std::copy(col.begin(), col.end(), mask.bits.begin() + static_cast<std::ptrdiff_t>(b * m));
  }
  return mask;
}

namespace {

template <typename F>
std::uint64_t time_ns(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  const auto t1 = std::chrono::steady_clock::now();
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
}

double median(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? static_cast<double>(v[n / 2])
               : 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
}

}  // namespace

BenchReport bench_compare(const std::vector<BenchShape>& shapes, const BenchOptions& options) {
  if (shapes.empty()) throw std::invalid_argument("bench_compare: no shapes given");
  if (options.reps < 5) throw std::invalid_argument("bench_compare: need at least 5 repetitions");
  const NmConfig cfg(4, 2);
  BenchReport report;
  report.threads = std::max(1u, options.threads);
  report.reps = options.reps;
  std::uint64_t stream = 0;
  for (const BenchShape& s : shapes) {
    const Matrix w = random_matrix(s.m, s.k, options.seed, stream++);
    const BitMask mask = random_mask(s.m, s.k, cfg, options.seed, stream++);
    const Matrix x = random_matrix(s.k, s.n, options.seed, stream++);
    const Matrix masked = hadamard(mask.to_matrix(), w);
    const Compressed24 a = compress(w, mask);

    BenchEntry e;
    e.shape = s;
    e.flops = flop_count(s.m, s.k, s.n, cfg);
    // Correctness check on the exact data that is timed.
    e.max_abs_error =
        max_abs_diff(matmul_parallel(masked, x, report.threads), spmm_parallel(a, x, report.threads));

    std::vector<std::uint64_t> dense_ns;
    std::vector<std::uint64_t> sparse_ns;
    for (std::size_t r = 0; r < options.warmup + options.reps; ++r) {
      Matrix sink;
      const auto td = time_ns([&] { sink = matmul_parallel(masked, x, report.threads); });
      const auto ts = time_ns([&] { sink = spmm_parallel(a, x, report.threads); });
      if (r < options.warmup) continue;
      dense_ns.push_back(td);
      sparse_ns.push_back(ts);
      report.samples.push_back({s, "dense", r - options.warmup, td});
      report.samples.push_back({s, "sparse", r - options.warmup, ts});
    }
    e.dense_median_ns = median(dense_ns);
    e.sparse_median_ns = median(sparse_ns);
    e.dense_min_ns = static_cast<double>(*std::min_element(dense_ns.begin(), dense_ns.end()));
    e.sparse_min_ns = static_cast<double>(*std::min_element(sparse_ns.begin(), sparse_ns.end()));
    report.entries.push_back(e);
  }
  return report;
}

void BenchReport::write_table(std::ostream& os) const {
  os << "threads=" << threads << " reps=" << reps << "\n";
  os << std::left << std::setw(18) << "shape (m,k,n)" << std::right << std::setw(14)
     << "dense med ms" << std::setw(14) << "sparse med ms" << std::setw(10) << "speedup"
     << std::setw(12) << "dense MACs" << std::setw(12) << "sparse MACs" << std::setw(8) << "ratio"
     << "\n";
  os << std::fixed;
  for (const auto& e : entries) {
    const std::string shape = std::to_string(e.shape.m) + "x" + std::to_string(e.shape.k) + "x" +
                              std::to_string(e.shape.n);
    os << std::left << std::setw(18) << shape << std::right << std::setprecision(3)
       << std::setw(14) << e.dense_median_ns / 1e6 << std::setw(14) << e.sparse_median_ns / 1e6
       << std::setw(10) << e.speedup() << std::setw(12) << e.flops.dense_macs << std::setw(12)
       << e.flops.sparse_macs << std::setprecision(2) << std::setw(8) << e.flops.ratio << "\n";
  }
  os.unsetf(std::ios::fixed);
}

void BenchReport::write_records(std::ostream& os) const {
  os << "m\tk\tn\tmode\trep\tnanoseconds\n";
  for (const auto& s : samples) {
    os << s.shape.m << '\t' << s.shape.k << '\t' << s.shape.n << '\t' << s.mode << '\t' << s.rep
       << '\t' << s.nanoseconds << '\n';
  }
}

}  // namespace nmsparse
