// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace sppft {

/// Dense row-major matrix of doubles.
///
/// Constructors reject zero extents and non-finite entries. A
/// default-constructed Matrix is an empty placeholder (0x0) that no
/// operation accepts as an operand.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, double fill);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Builds a matrix from nested row literals, e.g. `{{1, 2}, {3, 4}}`.
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  Matrix(const Matrix& other);
  Matrix& operator=(const Matrix& other);
  Matrix(Matrix&&) noexcept = default;
  Matrix& operator=(Matrix&&) noexcept = default;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  /// Exact elementwise equality (shapes included). -0.0 equals 0.0.
  friend bool operator==(const Matrix& a, const Matrix& b) noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Arithmetic. All reductions sum in ascending index order.
// ---------------------------------------------------------------------------

/// a (b x n) times b_t transposed (b_t is m x n): result (b x m).
Matrix matmul(const Matrix& a, const Matrix& b_t);

/// a (b x m) times b (m x n): result (b x n).
Matrix matmul_nn(const Matrix& a, const Matrix& b);

/// a transposed (a is b x m) times c (b x n): result (m x n).
Matrix matmul_tn(const Matrix& a, const Matrix& c);

Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix transpose(const Matrix& a);

/// Repeats each row k times consecutively: output row i is input row i / k.
Matrix repeat_rows(const Matrix& a, std::size_t k);

/// Expands an m x 1 column to m x n by repeating each entry along its row.
Matrix broadcast_col(const Matrix& v, std::size_t n);

std::size_t count_nonzero(const Matrix& a) noexcept;
double max_abs(const Matrix& a) noexcept;
double frobenius_norm(const Matrix& a) noexcept;

/// Largest |a - b| divided by max(max|a|, max|b|); 0 when both are zero.
double relative_max_error(const Matrix& a, const Matrix& b);

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

/// xoshiro256** seeded through splitmix64. Single owner; not thread-safe.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform double in [0, 1) with 53 random mantissa bits.
  double next_unit() noexcept;

  /// Uniform double in [lo, hi). Requires lo < hi.
  double uniform(double lo, double hi);

  /// Uniform integer in [0, bound). Requires bound > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Derives an independent generator from this stream.
  Rng split() noexcept { return Rng(next_u64()); }

 private:
  std::array<std::uint64_t, 4> s_{};
};

Matrix rng_uniform(Rng& rng, double lo, double hi, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Allocation accounting
// ---------------------------------------------------------------------------

/// Records every Matrix buffer allocated on the current thread while alive.
/// Probes nest; each sees the allocations made during its own lifetime.
class AllocationProbe {
 public:
  AllocationProbe();
  ~AllocationProbe();
  AllocationProbe(const AllocationProbe&) = delete;
  AllocationProbe& operator=(const AllocationProbe&) = delete;

  std::size_t allocations() const noexcept { return shapes_.size(); }
  std::size_t largest_elements() const noexcept;
  std::size_t count_shape(std::size_t rows, std::size_t cols) const noexcept;

  void record(std::size_t rows, std::size_t cols);

 private:
  AllocationProbe* previous_;
  std::vector<std::array<std::size_t, 2>> shapes_;
};

}  // namespace sppft
