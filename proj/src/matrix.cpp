#include "nmsparse/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace nmsparse {

namespace {

void check_inner(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + ")");
  }
}

// Rows [begin, end) of C = A * B. i-k-j order keeps the inner loop contiguous;
// each C(i, j) still receives its terms in ascending k.
void matmul_rows(const Matrix& a, const Matrix& b, Matrix& c, std::size_t begin,
                 std::size_t end) {
  const std::size_t n = b.cols();
  for (std::size_t i = begin; i < end; ++i) {
    double* out = c.row(i).data();
    const double* arow = a.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double av = arow[k];
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b, MacCounter* counter) {
  check_inner(a, b);
  Matrix c(a.rows(), b.cols());
  matmul_rows(a, b, c, 0, a.rows());
  if (counter) counter->macs += static_cast<std::uint64_t>(a.rows()) * a.cols() * b.cols();
  return c;
}

Matrix matmul_parallel(const Matrix& a, const Matrix& b, unsigned threads) {
  check_inner(a, b);
  Matrix c(a.rows(), b.cols());
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(a.rows())));
  if (threads == 1) {
    matmul_rows(a, b, c, 0, a.rows());
    return c;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (a.rows() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(a.rows(), begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] { matmul_rows(a, b, c, begin, end); });
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  return t;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("hadamard: shape mismatch");
  }
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

double norm_inf(const Matrix& m) {
  double best = 0.0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (double v : m.row(r)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

double norm_inf(std::span<const double> v) {
  double best = 0.0;
  for (double x : v) best = std::max(best, std::abs(x));
  return best;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  }
  double best = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    best = std::max(best, std::abs(a.data()[i] - b.data()[i]));
  return best;
}

}  // namespace nmsparse
