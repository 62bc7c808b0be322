#pragma once

#include <cstddef>
#include <vector>

#include "nmsparse/matrix.hpp"
#include "nmsparse/nm_patterns.hpp"

namespace nmsparse {

/// c x h x w tensor, row-major (channel, row, col).
struct Tensor3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}
  Tensor3(std::size_t c, std::size_t h, std::size_t w, std::vector<double> values);

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;
};

/// c_out kernels of shape c_in x kh x kw, stored contiguously per kernel.
/// Kernel sides must be odd.
struct KernelStack {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::vector<double> data;

  KernelStack() = default;
  KernelStack(std::size_t c_out, std::size_t c_in, std::size_t h, std::size_t w,
              std::vector<double> values);

  std::size_t taps() const { return in_channels * kh * kw; }
  double at(std::size_t o, std::size_t c, std::size_t u, std::size_t s) const {
    return data[((o * in_channels + c) * kh + u) * kw + s];
  }
};

/// Input windows as columns: (c_in*kh*kw [+ zero rows]) x (height*width).
/// Row order is (channel, kernel row, kernel col); column order is output
/// position, row-major.
struct UnfoldedInput {
  Matrix columns;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t real_rows = 0;  // rows past this are appended zero rows
};

/// Conv weights flattened to c_out x (c_in*kh*kw), optionally widened with
/// trailing structural-zero columns to a multiple of the block length.
struct WeightMatrix {
  Matrix values;
  std::size_t real_cols = 0;

  std::size_t structural_cols() const { return values.cols() - real_cols; }
};

/// Same-size output, stride 1, zero padding floor(k/2) on each side.
Tensor3 conv_direct(const Tensor3& x, const KernelStack& kernels);

/// Throws on zero-size input or even kernel sides. align_rows > 0 appends
/// zero rows until the row count is a multiple of align_rows.
UnfoldedInput unfold(const Tensor3& x, std::size_t kh, std::size_t kw, std::size_t align_rows = 0);

/// Adjoint of unfold(): scatters column gradients back onto the input.
Tensor3 unfold_adjoint(const Matrix& grad_columns, std::size_t channels, std::size_t height,
                       std::size_t width, std::size_t kh, std::size_t kw);

/// Number of output positions (b + 2p1 - kw + 1)(d + 2p2 - kh + 1).
std::size_t output_positions(std::size_t height, std::size_t width, std::size_t kh, std::size_t kw,
                             std::size_t pad_h, std::size_t pad_w);

WeightMatrix kernels_to_weight_matrix(const KernelStack& kernels, bool align4);

/// Pads to a multiple of `block_len` columns with structural zeros.
WeightMatrix align_weight_matrix(const Matrix& w, std::size_t real_cols, std::size_t block_len);

/// Reshape of W * U(X) to c_out x height x width. Structural columns of W
/// meet zero rows when U is shorter than W is wide.
Tensor3 conv_matmul(const WeightMatrix& w, const UnfoldedInput& u);
Tensor3 conv_matmul(const Matrix& w, const UnfoldedInput& u);

/// (mask ⊙ W) U(X); `mask` must have the augmented weight shape.
Tensor3 masked_conv(const WeightMatrix& w, const Matrix& mask, const UnfoldedInput& u);
Tensor3 masked_conv(const WeightMatrix& w, const BitMask& mask, const UnfoldedInput& u);

/// Zeroes every kernel tap whose mask bit is 0 (structural columns ignored).
KernelStack apply_mask_to_kernels(const KernelStack& kernels, const BitMask& mask);

}  // namespace nmsparse
