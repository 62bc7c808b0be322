#include <gtest/gtest.h>

#include "nmsparse/conv_engine.hpp"
#include "nmsparse/rng.hpp"
#include "nmsparse/sparse_kernel.hpp"

using namespace nmsparse;

namespace {

Tensor3 random_tensor(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  const CounterRng rng(seed);
  Tensor3 t(c, h, w);
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = rng.uniform(-1, 1, i);
  return t;
}

KernelStack random_kernels(std::size_t co, std::size_t ci, std::size_t k, std::uint64_t seed) {
  const CounterRng rng(seed);
  std::vector<double> v(co * ci * k * k);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1, 1, 0x6b, i);
  return {co, ci, k, k, v};
}

double max_diff(const Tensor3& a, const Tensor3& b) {
  EXPECT_EQ(a.channels, b.channels);
  EXPECT_EQ(a.height, b.height);
  EXPECT_EQ(a.width, b.width);
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

}  // namespace

TEST(ConvDirect, OneByOneScales) {
  const Tensor3 x = random_tensor(1, 3, 5, 1);
  const Tensor3 y = conv_direct(x, KernelStack(1, 1, 1, 1, {2.0}));
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_EQ(y.data[i], 2.0 * x.data[i]);
}

TEST(ConvDirect, AllOnesOnTwoByTwo) {
  const Tensor3 x(1, 2, 2, {1, 2, 3, 4});
  const Tensor3 y = conv_direct(x, KernelStack(1, 1, 3, 3, std::vector<double>(9, 1.0)));
  EXPECT_EQ(y.data, (std::vector<double>{10, 10, 10, 10}));
}

TEST(ConvDirect, DeltaKernelIsIdentity) {
  const Tensor3 x = random_tensor(1, 6, 4, 2);
  std::vector<double> k(25, 0.0);
  k[12] = 1.0;
  EXPECT_EQ(conv_direct(x, KernelStack(1, 1, 5, 5, k)), x);
}

TEST(ConvDirect, RejectsBadShapes) {
  EXPECT_THROW(KernelStack(1, 1, 2, 3, std::vector<double>(6)), std::invalid_argument);
  EXPECT_THROW(conv_direct(random_tensor(2, 3, 3, 0), random_kernels(1, 1, 3, 0)),
               std::invalid_argument);
}

TEST(Unfold, OneByOne) {
  const UnfoldedInput u = unfold(Tensor3(1, 2, 2, {1, 2, 3, 4}), 1, 1);
  EXPECT_EQ(u.columns, Matrix(1, 4, {1, 2, 3, 4}));
}

TEST(Unfold, ThreeByThreeShapeAndPadding) {
  const UnfoldedInput u = unfold(Tensor3(1, 2, 2, {1, 2, 3, 4}), 3, 3);
  EXPECT_EQ(u.columns.rows(), 9u);
  EXPECT_EQ(u.columns.cols(), 4u);
  // Window centred at (0,0): only taps (1,1),(1,2),(2,1),(2,2) fall inside.
  const double col0[9] = {0, 0, 0, 0, 1, 2, 0, 3, 4};
  for (std::size_t r = 0; r < 9; ++r) EXPECT_EQ(u.columns(r, 0), col0[r]) << r;
}

TEST(Unfold, RejectsZeroSize) {
  EXPECT_THROW(unfold(Tensor3(1, 0, 3), 3, 3), std::invalid_argument);
  EXPECT_THROW(unfold(Tensor3(1, 3, 3), 2, 3), std::invalid_argument);
}

TEST(Unfold, PositionsEqualImageArea) {
  for (std::size_t k = 1; k <= 7; k += 2) {
    for (std::size_t b : {1u, 4u, 9u}) {
      for (std::size_t d : {1u, 5u, 8u}) {
        EXPECT_EQ(output_positions(b, d, k, k, k / 2, k / 2), b * d);
        EXPECT_EQ(unfold(Tensor3(2, b, d), k, k).columns.cols(), b * d);
      }
    }
  }
}

TEST(Unfold, IsLinear) {
  const Tensor3 x = random_tensor(3, 5, 4, 3);
  const Tensor3 z = random_tensor(3, 5, 4, 4);
  // Powers of two keep a*x + b*z exact in binary floating point.
  const double a = 0.5, bb = -2.0;
  Tensor3 mix(3, 5, 4);
  for (std::size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = a * x.data[i] + bb * z.data[i];
  const Matrix lhs = unfold(mix, 3, 3).columns;
  const Matrix ux = unfold(x, 3, 3).columns;
  const Matrix uz = unfold(z, 3, 3).columns;
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_EQ(lhs.data()[i], a * ux.data()[i] + bb * uz.data()[i]);
}

TEST(Unfold, AdjointIdentity) {
  // <unfold(x), G> == <x, unfold_adjoint(G)>.
  const Tensor3 x = random_tensor(2, 4, 5, 5);
  const UnfoldedInput u = unfold(x, 3, 3);
  const CounterRng rng(6);
  Matrix g(u.columns.rows(), u.columns.cols());
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(-1, 1, i);
  const Tensor3 back = unfold_adjoint(g, 2, 4, 5, 3, 3);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) lhs += u.columns.data()[i] * g.data()[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += x.data[i] * back.data[i];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(WeightMatrix, Examples) {
  const WeightMatrix one = kernels_to_weight_matrix(KernelStack(1, 1, 1, 1, {5.0}), false);
  EXPECT_EQ(one.values, Matrix(1, 1, {5.0}));
  const WeightMatrix w = kernels_to_weight_matrix(random_kernels(4, 1, 3, 7), true);
  EXPECT_EQ(w.values.rows(), 4u);
  EXPECT_EQ(w.values.cols(), 12u);
  EXPECT_EQ(w.real_cols, 9u);
  EXPECT_EQ(w.structural_cols(), 3u);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 9; c < 12; ++c) EXPECT_EQ(w.values(r, c), 0.0);
  const WeightMatrix plain = kernels_to_weight_matrix(random_kernels(4, 1, 3, 7), false);
  EXPECT_EQ(plain.values.cols(), 9u);
}

TEST(WeightMatrix, FlatteningOrder) {
  const KernelStack k = random_kernels(2, 3, 3, 8);
  const WeightMatrix w = kernels_to_weight_matrix(k, false);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(w.values(o, (c * 3 + u) * 3 + s), k.at(o, c, u, s));
}

TEST(ConvMatmul, MatchesDirectOnSpecInstance) {
  const Tensor3 x = random_tensor(2, 5, 5, 9);
  const KernelStack k = random_kernels(3, 2, 3, 10);
  const Tensor3 ref = conv_direct(x, k);
  const Tensor3 y = conv_matmul(kernels_to_weight_matrix(k, false), unfold(x, 3, 3));
  EXPECT_LE(max_diff(ref, y), 1e-10);
}

TEST(ConvMatmul, IdentityAndZero) {
  const Tensor3 x = random_tensor(3, 4, 4, 11);
  std::vector<double> eye(9, 0.0);
  eye[0] = eye[4] = eye[8] = 1.0;
  const KernelStack id(3, 3, 1, 1, eye);
  EXPECT_EQ(conv_matmul(kernels_to_weight_matrix(id, false), unfold(x, 1, 1)), x);
  const WeightMatrix zero{Matrix(2, 27), 27};
  for (double v : conv_matmul(zero, unfold(x, 3, 3)).data) EXPECT_EQ(v, 0.0);
}

TEST(ConvMatmul, RejectsMismatch) {
  const Tensor3 x = random_tensor(2, 4, 4, 12);
  EXPECT_THROW(conv_matmul(Matrix(1, 17), unfold(x, 3, 3)), std::invalid_argument);
  WeightMatrix w{Matrix(1, 20), 18};
  w.values(0, 19) = 1.0;  // non-zero structural column
  EXPECT_THROW(conv_matmul(w, unfold(x, 3, 3)), std::invalid_argument);
}

TEST(ConvMatmul, AugmentationNeverChangesOutput) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor3 x = random_tensor(1 + s % 5, 3 + s % 7, 2 + s % 6, s);
    const KernelStack k = random_kernels(1 + s % 3, x.channels, 1 + 2 * (s % 3), s + 50);
    const Tensor3 a = conv_matmul(kernels_to_weight_matrix(k, false), unfold(x, k.kh, k.kw));
    const Tensor3 b = conv_matmul(kernels_to_weight_matrix(k, true), unfold(x, k.kh, k.kw));
    const Tensor3 c = conv_matmul(kernels_to_weight_matrix(k, true), unfold(x, k.kh, k.kw, 4));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
  }
}

TEST(MaskedConv, OnesZerosAndPrezeroedKernels) {
  const Tensor3 x = random_tensor(3, 6, 6, 13);
  const KernelStack k = random_kernels(4, 3, 3, 14);
  const WeightMatrix w = kernels_to_weight_matrix(k, true);
  const UnfoldedInput u = unfold(x, 3, 3);
  EXPECT_EQ(masked_conv(w, Matrix(4, 28, 1.0), u), conv_matmul(w, u));
  for (double v : masked_conv(w, Matrix(4, 28, 0.0), u).data) EXPECT_EQ(v, 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const BitMask b = random_mask(4, 28, NmConfig{}, s, 0);
    const Tensor3 ref = conv_direct(x, apply_mask_to_kernels(k, b));
    EXPECT_LE(max_diff(ref, masked_conv(w, b, u)), 1e-10);
  }
}

TEST(MaskedConv, RejectsInvalidMask) {
  const Tensor3 x = random_tensor(1, 4, 4, 15);
  const WeightMatrix w = kernels_to_weight_matrix(random_kernels(2, 1, 3, 16), true);
  BitMask bad(2, 12, NmConfig{}, 1);
  EXPECT_THROW(masked_conv(w, bad, unfold(x, 3, 3)), std::invalid_argument);
  EXPECT_THROW(masked_conv(w, Matrix(2, 8, 1.0), unfold(x, 3, 3)), std::invalid_argument);
}

TEST(ConvEquivalence, ThreeWayRandom) {
  // direct == matmul == masked(all ones) == spmm over the compressed weights.
  for (std::uint64_t s = 0; s < 40; ++s) {
    const std::size_t ci = 1 + s % 8, co = 1 + (s * 3) % 8;
    const std::size_t h = 1 + (s * 5) % 16, wd = 1 + (s * 7) % 16;
    const std::size_t kk = 1 + 2 * (s % 3);
    const Tensor3 x = random_tensor(ci, h, wd, 200 + s);
    const KernelStack k = random_kernels(co, ci, kk, 300 + s);
    const WeightMatrix w = kernels_to_weight_matrix(k, true);
    const UnfoldedInput u = unfold(x, kk, kk, 4);
    const Tensor3 ref = conv_direct(x, k);
    EXPECT_LE(max_diff(ref, conv_matmul(w, u)), 1e-10);
    EXPECT_LE(max_diff(ref, masked_conv(w, Matrix(co, w.values.cols(), 1.0), u)), 1e-10);

    const BitMask b = random_mask(co, w.values.cols(), NmConfig{}, s, 1);
    const Matrix y = spmm(compress(w.values, b), u.columns);
    const Tensor3 masked_ref = conv_direct(x, apply_mask_to_kernels(k, b));
    const Tensor3 ys(co, h, wd, y.data());
    EXPECT_LE(max_diff(masked_ref, ys), 1e-10);
  }
}
