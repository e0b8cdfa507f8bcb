// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>

#include "sppft/errors.hpp"
#include "sppft/numerics.hpp"
#include "test_util.hpp"

using namespace sppft;
using sppft::testing::triple_loop_matmul;

TEST(Matmul, HandComputed) {
  EXPECT_EQ(matmul(Matrix::from_rows({{1, 2}}), Matrix::from_rows({{3, 4}})),
            Matrix::from_rows({{11}}));
  const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
  EXPECT_EQ(matmul(eye, eye), eye);
}

TEST(Matmul, TripleLoopOracleBitExact) {
  Rng rng(7);
  const Matrix a = rng_uniform(rng, -1, 1, 3, 5);
  const Matrix b = rng_uniform(rng, -1, 1, 4, 5);
  EXPECT_EQ(matmul(a, b), triple_loop_matmul(a, b));
  for (std::size_t bs = 1; bs <= 8; ++bs) {
    for (std::size_t m = 1; m <= 8; ++m) {
      for (std::size_t n = 1; n <= 8; ++n) {
        const Matrix x = rng_uniform(rng, -2, 2, bs, n);
        const Matrix w = rng_uniform(rng, -2, 2, m, n);
        ASSERT_EQ(matmul(x, w), triple_loop_matmul(x, w)) << bs << "x" << m << "x" << n;
      }
    }
  }
}

TEST(Matmul, VariantsAgreeWithTranspose) {
  Rng rng(3);
  const Matrix a = rng_uniform(rng, -1, 1, 4, 3);
  const Matrix b = rng_uniform(rng, -1, 1, 3, 5);
  EXPECT_EQ(matmul_nn(a, b), matmul(a, transpose(b)));
  const Matrix c = rng_uniform(rng, -1, 1, 4, 5);
  EXPECT_EQ(matmul_tn(a, c), matmul(transpose(a), transpose(c)));
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 4)), ShapeError);
  EXPECT_THROW(matmul_nn(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST(Hadamard, Examples) {
  EXPECT_EQ(hadamard(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{1, 0}, {0, 1}})),
            Matrix::from_rows({{1, 0}, {0, 4}}));
  EXPECT_EQ(hadamard(Matrix::from_rows({{2, 3}}), Matrix::from_rows({{5, 7}})),
            Matrix::from_rows({{10, 21}}));
  Rng rng(1);
  const Matrix a = rng_uniform(rng, -1, 1, 3, 3);
  EXPECT_EQ(hadamard(a, Matrix(3, 3, 1.0)), a);
  EXPECT_THROW(hadamard(Matrix(2, 2), Matrix(2, 3)), ShapeError);
}

TEST(Hadamard, CommutativeAndAssociativeOnSmallIntegers) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a(3, 4), b(3, 4), c(3, 4);
    for (auto* m : {&a, &b, &c}) {
      for (auto& v : m->data()) v = static_cast<double>(rng.below(17)) - 8.0;
    }
    EXPECT_EQ(hadamard(a, b), hadamard(b, a));
    EXPECT_EQ(hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c)));
  }
}

TEST(RepeatRows, Examples) {
  EXPECT_EQ(repeat_rows(Matrix::from_rows({{1, 2}, {3, 4}}), 2),
            Matrix::from_rows({{1, 2}, {1, 2}, {3, 4}, {3, 4}}));
  const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(repeat_rows(a, 1), a);
  EXPECT_EQ(repeat_rows(Matrix::from_rows({{5}}), 3), Matrix::from_rows({{5}, {5}, {5}}));
}

TEST(RepeatRows, BlockSumsRecoverScaledInput) {
  Rng rng(5);
  for (std::size_t k = 1; k <= 5; ++k) {
    Matrix a(3, 4);
    for (auto& v : a.data()) v = static_cast<double>(rng.below(100));
    const Matrix rep = repeat_rows(a, k);
    Matrix sums(3, 4);
    for (std::size_t i = 0; i < rep.rows(); ++i) {
      for (std::size_t j = 0; j < 4; ++j) sums(i / k, j) += rep(i, j);
    }
    EXPECT_EQ(sums, scale(a, static_cast<double>(k)));
  }
}

TEST(BroadcastCol, Examples) {
  EXPECT_EQ(broadcast_col(Matrix::from_rows({{2}, {3}}), 2), Matrix::from_rows({{2, 2}, {3, 3}}));
  const Matrix v = Matrix::from_rows({{1.5}, {-2}});
  EXPECT_EQ(broadcast_col(v, 1), v);
  EXPECT_EQ(broadcast_col(Matrix::from_rows({{0}}), 4), Matrix(1, 4, 0.0));
  EXPECT_THROW(broadcast_col(Matrix(2, 2), 3), ShapeError);
}

TEST(MatrixCtor, RejectsBadInput) {
  EXPECT_THROW(Matrix(0, 3), ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::nan("")), ArgumentError);
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Rng, GoldenVectorSeed42) {
  // Reference values from an independent splitmix64 + xoshiro256** implementation.
  const std::uint64_t golden[16] = {
      0x15780b2e0c2ec716ULL, 0x6104d9866d113a7eULL, 0xae17533239e499a1ULL, 0xecb8ad4703b360a1ULL,
      0xfde6dc7fe2ec5e64ULL, 0xc50da53101795238ULL, 0xb82154855a65ddb2ULL, 0xd99a2743ebe60087ULL,
      0xc2e96e726e97647eULL, 0x9556615f775fbc3dULL, 0xaeb53b340c103971ULL, 0x4a69db9873af8965ULL,
      0xcd0feda93006c6b6ULL, 0x52480865a4b42742ULL, 0xb60dec3bf2d887cdULL, 0xe0b55a68b96677faULL,
  };
  Rng rng(42);
  for (auto g : golden) EXPECT_EQ(rng.next_u64(), g);
}

TEST(Rng, UnitDoubleUsesTop53Bits) {
  Rng a(42), b(42);
  const std::uint64_t raw = a.next_u64();
  EXPECT_EQ(b.next_unit(), static_cast<double>(raw >> 11) * 0x1.0p-53);
}

TEST(RngUniform, DeterministicAndInRange) {
  Rng a(9), b(9);
  EXPECT_EQ(rng_uniform(a, -1, 1, 5, 5), rng_uniform(b, -1, 1, 5, 5));

  Rng rng(123);
  const Matrix u = rng_uniform(rng, 0.0, 1.0, 100, 100);
  double sum = 0.0;
  for (double v : u.data()) sum += v;
  EXPECT_NEAR(sum / 1e4, 0.5, 0.02);

  const double hi = 1.0;
  const double lo = hi - 1e-12;
  const Matrix narrow = rng_uniform(rng, lo, hi, 50, 50);
  for (double v : narrow.data()) {
    EXPECT_GE(v, lo);
    EXPECT_LT(v, hi);
  }
  EXPECT_THROW(rng_uniform(rng, 1.0, 1.0, 1, 1), ArgumentError);
}

TEST(Rng, BelowStaysInBounds) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(7), 7u);
  EXPECT_THROW(rng.below(0), ArgumentError);
}

TEST(AllocationProbe, CountsShapesAndNests) {
  AllocationProbe outer;
  Matrix a(3, 4);
  {
    AllocationProbe inner;
    Matrix b(5, 6);
    Matrix c = b;
    EXPECT_EQ(inner.allocations(), 2u);
    EXPECT_EQ(inner.count_shape(5, 6), 2u);
    EXPECT_EQ(inner.count_shape(3, 4), 0u);
  }
  EXPECT_EQ(outer.count_shape(3, 4), 1u);
  EXPECT_EQ(outer.count_shape(5, 6), 2u);
  EXPECT_EQ(outer.largest_elements(), 30u);
}

TEST(Norms, Basics) {
  const Matrix a = Matrix::from_rows({{3, 0}, {0, -4}});
  EXPECT_EQ(count_nonzero(a), 2u);
  EXPECT_EQ(max_abs(a), 4.0);
  EXPECT_EQ(frobenius_norm(a), 5.0);
  EXPECT_EQ(relative_max_error(a, a), 0.0);
  EXPECT_DOUBLE_EQ(relative_max_error(a, Matrix::from_rows({{3, 0}, {0, -3}})), 0.25);
}
