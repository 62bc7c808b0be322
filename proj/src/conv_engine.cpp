#include "nmsparse/conv_engine.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace nmsparse {

namespace {

void require_odd(std::size_t kh, std::size_t kw) {
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw std::invalid_argument("even kernel dimensions are not supported (" +
                                std::to_string(kh) + "x" + std::to_string(kw) + ")");
  }
}

// Input coordinate of kernel tap `k` for output coordinate `o`, or -1 if
// the tap falls into the zero padding.
inline std::ptrdiff_t tap_coord(std::size_t o, std::size_t k, std::size_t pad, std::size_t extent) {
  const auto c = static_cast<std::ptrdiff_t>(o + k) - static_cast<std::ptrdiff_t>(pad);
  return (c < 0 || c >= static_cast<std::ptrdiff_t>(extent)) ? -1 : c;
}

}  // namespace

Tensor3::Tensor3(std::size_t c, std::size_t h, std::size_t w, std::vector<double> values)
    : channels(c), height(h), width(w), data(std::move(values)) {
  if (data.size() != c * h * w) throw std::invalid_argument("Tensor3: data length mismatch");
}

KernelStack::KernelStack(std::size_t c_out, std::size_t c_in, std::size_t h, std::size_t w,
                         std::vector<double> values)
    : out_channels(c_out), in_channels(c_in), kh(h), kw(w), data(std::move(values)) {
  if (data.size() != c_out * c_in * h * w) {
    throw std::invalid_argument("KernelStack: data length mismatch");
  }
  require_odd(h, w);
}

std::size_t output_positions(std::size_t height, std::size_t width, std::size_t kh, std::size_t kw,
                             std::size_t pad_h, std::size_t pad_w) {
  return (height + 2 * pad_h - kh + 1) * (width + 2 * pad_w - kw + 1);
}

Tensor3 conv_direct(const Tensor3& x, const KernelStack& kernels) {
  if (x.channels != kernels.in_channels) {
    throw std::invalid_argument("conv_direct: input has " + std::to_string(x.channels) +
                                " channels, kernels expect " +
                                std::to_string(kernels.in_channels));
  }
  require_odd(kernels.kh, kernels.kw);
  const std::size_t ph = kernels.kh / 2;
  const std::size_t pw = kernels.kw / 2;
  Tensor3 y(kernels.out_channels, x.height, x.width);
  for (std::size_t o = 0; o < kernels.out_channels; ++o) {
    for (std::size_t i = 0; i < x.height; ++i) {
      for (std::size_t j = 0; j < x.width; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < x.channels; ++c) {
          for (std::size_t u = 0; u < kernels.kh; ++u) {
            const auto yy = tap_coord(i, u, ph, x.height);
            if (yy < 0) continue;
            for (std::size_t s = 0; s < kernels.kw; ++s) {
              const auto xx = tap_coord(j, s, pw, x.width);
              if (xx < 0) continue;
              acc += kernels.at(o, c, u, s) *
                     x.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
            }
          }
        }
        y.at(o, i, j) = acc;
      }
    }
  }
  return y;
}

UnfoldedInput unfold(const Tensor3& x, std::size_t kh, std::size_t kw, std::size_t align_rows) {
  if (x.channels == 0 || x.height == 0 || x.width == 0 || kh == 0 || kw == 0) {
    throw std::invalid_argument("unfold: zero-size input or kernel");
  }
  require_odd(kh, kw);
  const std::size_t ph = kh / 2;
  const std::size_t pw = kw / 2;
  const std::size_t real = x.channels * kh * kw;
  std::size_t rows = real;
  if (align_rows > 1 && rows % align_rows != 0) rows += align_rows - rows % align_rows;
  const std::size_t positions = output_positions(x.height, x.width, kh, kw, ph, pw);

  UnfoldedInput u{Matrix(rows, positions), x.height, x.width, real};
  for (std::size_t c = 0; c < x.channels; ++c) {
    for (std::size_t a = 0; a < kh; ++a) {
      for (std::size_t s = 0; s < kw; ++s) {
        double* dst = u.columns.row((c * kh + a) * kw + s).data();
        for (std::size_t i = 0; i < x.height; ++i) {
          const auto yy = tap_coord(i, a, ph, x.height);
          if (yy < 0) continue;
          for (std::size_t j = 0; j < x.width; ++j) {
            const auto xx = tap_coord(j, s, pw, x.width);
            if (xx < 0) continue;
            dst[i * x.width + j] = x.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          }
        }
      }
    }
  }
  return u;
}

Tensor3 unfold_adjoint(const Matrix& grad_columns, std::size_t channels, std::size_t height,
                       std::size_t width, std::size_t kh, std::size_t kw) {
  require_odd(kh, kw);
  if (grad_columns.rows() < channels * kh * kw || grad_columns.cols() != height * width) {
    throw std::invalid_argument("unfold_adjoint: gradient shape mismatch");
  }
  const std::size_t ph = kh / 2;
  const std::size_t pw = kw / 2;
  Tensor3 g(channels, height, width);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t a = 0; a < kh; ++a) {
      for (std::size_t s = 0; s < kw; ++s) {
        const double* src = grad_columns.row((c * kh + a) * kw + s).data();
        for (std::size_t i = 0; i < height; ++i) {
          const auto yy = tap_coord(i, a, ph, height);
          if (yy < 0) continue;
          for (std::size_t j = 0; j < width; ++j) {
            const auto xx = tap_coord(j, s, pw, width);
            if (xx < 0) continue;
            g.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) += src[i * width + j];
          }
        }
      }
    }
  }
  return g;
}

WeightMatrix align_weight_matrix(const Matrix& w, std::size_t real_cols, std::size_t block_len) {
  std::size_t cols = real_cols;
  if (block_len > 1 && cols % block_len != 0) cols += block_len - cols % block_len;
  WeightMatrix out{Matrix(w.rows(), cols), real_cols};
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < real_cols; ++c) out.values(r, c) = w(r, c);
  return out;
}

WeightMatrix kernels_to_weight_matrix(const KernelStack& kernels, bool align4) {
  const std::size_t taps = kernels.taps();
  Matrix flat(kernels.out_channels, taps, kernels.data);
  if (!align4) return {std::move(flat), taps};
  return align_weight_matrix(flat, taps, 4);
}

Tensor3 conv_matmul(const Matrix& w, const UnfoldedInput& u) {
  const Matrix& cols = u.columns;
  if (w.cols() < u.real_rows || cols.rows() < u.real_rows) {
    throw std::invalid_argument("conv_matmul: weight width " + std::to_string(w.cols()) +
                                " does not cover " + std::to_string(u.real_rows) + " taps");
  }
  // Columns past the shorter operand pair with implicit zeros on the other side.
  const std::size_t inner = std::min(w.cols(), cols.rows());
  for (std::size_t c = inner; c < w.cols(); ++c) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      if (w(r, c) != 0.0) {
        throw std::invalid_argument("conv_matmul: non-zero weight in a structural column");
      }
    }
  }
  const std::size_t positions = cols.cols();
  Tensor3 y(w.rows(), u.height, u.width);
  if (positions != u.height * u.width) throw std::invalid_argument("conv_matmul: bad unfold");
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double* out = y.data.data() + o * positions;
    for (std::size_t k = 0; k < inner; ++k) {
      const double wv = w(o, k);
      const double* src = cols.row(k).data();
      for (std::size_t p = 0; p < positions; ++p) out[p] += wv * src[p];
    }
  }
  return y;
}

Tensor3 conv_matmul(const WeightMatrix& w, const UnfoldedInput& u) {
  return conv_matmul(w.values, u);
}

Tensor3 masked_conv(const WeightMatrix& w, const Matrix& mask, const UnfoldedInput& u) {
  if (mask.rows() != w.values.rows() || mask.cols() != w.values.cols()) {
    throw std::invalid_argument("masked_conv: mask shape differs from the weight matrix");
  }
  return conv_matmul(hadamard(mask, w.values), u);
}

Tensor3 masked_conv(const WeightMatrix& w, const BitMask& mask, const UnfoldedInput& u) {
  require_valid_mask(mask);
  return masked_conv(w, mask.to_matrix(), u);
}

KernelStack apply_mask_to_kernels(const KernelStack& kernels, const BitMask& mask) {
  if (mask.rows != kernels.out_channels || mask.cols < kernels.taps()) {
    throw std::invalid_argument("apply_mask_to_kernels: mask shape mismatch");
  }
  KernelStack out = kernels;
  const std::size_t taps = kernels.taps();
  for (std::size_t o = 0; o < kernels.out_channels; ++o)
    for (std::size_t t = 0; t < taps; ++t)
      if (!mask(o, t)) out.data[o * taps + t] = 0.0;
  return out;
}

}  // namespace nmsparse
