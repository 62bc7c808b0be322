#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmsparse {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows_) + "x" +
                                  std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Counts multiply-accumulate operations performed by a kernel.
struct MacCounter {
  std::uint64_t macs = 0;
};

/// C = A * B with a fixed summation order (ascending inner index).
Matrix matmul(const Matrix& a, const Matrix& b, MacCounter* counter = nullptr);

/// Same product, output rows split across `threads` workers. Each output
/// element is still accumulated in ascending inner order, so the result is
/// bitwise identical to matmul().
Matrix matmul_parallel(const Matrix& a, const Matrix& b, unsigned threads);

Matrix transpose(const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);

/// Operator infinity-norm: maximum absolute row sum.
double norm_inf(const Matrix& m);

/// Max-norm of a vector.
double norm_inf(std::span<const double> v);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace nmsparse
