// SPDX-License-Identifier: Apache-2.0
#include "sppft/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sppft/errors.hpp"

namespace sppft {

namespace {

thread_local AllocationProbe* g_active_probe = nullptr;

void note_allocation(std::size_t rows, std::size_t cols) {
  if (g_active_probe != nullptr) g_active_probe->record(rows, cols);
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_nonempty(const Matrix& m, const char* op) {
  if (m.empty()) throw ShapeError(std::string(op) + ": empty operand");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require_nonempty(a, op);
  require_nonempty(b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  }
}

void check_extents(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix extents must be positive, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols) : Matrix(rows, cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols) {
  check_extents(rows, cols);
  if (!std::isfinite(fill)) throw ArgumentError("matrix fill value must be finite");
  note_allocation(rows, cols);
  data_.assign(rows * cols, fill);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  check_extents(rows, cols);
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw ArgumentError("matrix entry " + std::to_string(i) + " is not finite");
    }
  }
  note_allocation(rows, cols);
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw ShapeError("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

Matrix::Matrix(const Matrix& other)
    : rows_(other.rows_), cols_(other.cols_), data_(other.data_) {
  if (!data_.empty()) note_allocation(rows_, cols_);
}

Matrix& Matrix::operator=(const Matrix& other) {
  if (this != &other) {
    if (!other.data_.empty() && data_.size() != other.data_.size()) {
      note_allocation(other.rows_, other.cols_);
    }
    rows_ = other.rows_;
    cols_ = other.cols_;
    data_ = other.data_;
  }
  return *this;
}

bool operator==(const Matrix& a, const Matrix& b) noexcept {
  return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
}

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b_t) {
  require_nonempty(a, "matmul");
  require_nonempty(b_t, "matmul");
  if (a.cols() != b_t.cols()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_str(a) + " by " +
                     shape_str(b_t) + "^T");
  }
  const std::size_t n = a.cols();
  Matrix out(a.rows(), b_t.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto x = a.row(i);
    for (std::size_t j = 0; j < b_t.rows(); ++j) {
      const auto w = b_t.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += x[k] * w[k];
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
  require_nonempty(a, "matmul_nn");
  require_nonempty(b, "matmul_nn");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul_nn: inner dimensions differ, " + shape_str(a) + " by " +
                     shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& c) {
  require_nonempty(a, "matmul_tn");
  require_nonempty(c, "matmul_tn");
  if (a.rows() != c.rows()) {
    throw ShapeError("matmul_tn: outer dimensions differ, " + shape_str(a) + "^T by " +
                     shape_str(c));
  }
  Matrix out(a.cols(), c.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.rows(); ++k) acc += a(k, i) * c(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix out(a);
  auto o = out.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  Matrix out(a);
  auto o = out.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
  return out;
}

Matrix scale(const Matrix& a, double factor) {
  require_nonempty(a, "scale");
  Matrix out(a);
  for (double& v : out.data()) v *= factor;
  return out;
}

Matrix transpose(const Matrix& a) {
  require_nonempty(a, "transpose");
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Matrix repeat_rows(const Matrix& a, std::size_t k) {
  require_nonempty(a, "repeat_rows");
  if (k == 0) throw ArgumentError("repeat_rows: repetition count must be positive");
  Matrix out(a.rows() * k, a.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    std::ranges::copy(a.row(i / k), out.row(i).begin());
  }
  return out;
}

Matrix broadcast_col(const Matrix& v, std::size_t n) {
  require_nonempty(v, "broadcast_col");
  if (v.cols() != 1) throw ShapeError("broadcast_col: expected a column, got " + shape_str(v));
  if (n == 0) throw ArgumentError("broadcast_col: width must be positive");
  Matrix out(v.rows(), n);
  for (std::size_t i = 0; i < v.rows(); ++i) std::ranges::fill(out.row(i), v(i, 0));
  return out;
}

std::size_t count_nonzero(const Matrix& a) noexcept {
  return static_cast<std::size_t>(
      std::ranges::count_if(a.data(), [](double v) { return v != 0.0; }));
}

double max_abs(const Matrix& a) noexcept {
  double best = 0.0;
  for (double v : a.data()) best = std::max(best, std::abs(v));
  return best;
}

double frobenius_norm(const Matrix& a) noexcept {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return std::sqrt(acc);
}

double relative_max_error(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "relative_max_error");
  const double denom = std::max(max_abs(a), max_abs(b));
  if (denom == 0.0) return 0.0;
  double worst = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
  return worst / denom;
}

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

Rng::Rng(std::uint64_t seed) noexcept {
  for (auto& word : s_) word = splitmix64(seed);
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::next_unit() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw ArgumentError("uniform: lo must be below hi");
  const double v = lo + (hi - lo) * next_unit();
  // Rounding of the affine map can land on hi when the interval is tiny.
  return v < hi ? v : std::nextafter(hi, lo);
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ArgumentError("below: bound must be positive");
  const std::uint64_t limit = -bound % bound;  // 2^64 mod bound
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v >= limit) return v % bound;
  }
}

Matrix rng_uniform(Rng& rng, double lo, double hi, std::size_t rows, std::size_t cols) {
  if (!(lo < hi)) throw ArgumentError("rng_uniform: lo must be below hi");
  Matrix out(rows, cols);
  for (double& v : out.data()) v = rng.uniform(lo, hi);
  return out;
}

// ---------------------------------------------------------------------------
// AllocationProbe
// ---------------------------------------------------------------------------

AllocationProbe::AllocationProbe() : previous_(g_active_probe) { g_active_probe = this; }

AllocationProbe::~AllocationProbe() { g_active_probe = previous_; }

void AllocationProbe::record(std::size_t rows, std::size_t cols) {
  shapes_.push_back({rows, cols});
  if (previous_ != nullptr) previous_->record(rows, cols);
}

std::size_t AllocationProbe::largest_elements() const noexcept {
  std::size_t best = 0;
  for (const auto& s : shapes_) best = std::max(best, s[0] * s[1]);
  return best;
}

std::size_t AllocationProbe::count_shape(std::size_t rows, std::size_t cols) const noexcept {
  return static_cast<std::size_t>(std::ranges::count_if(
      shapes_, [&](const auto& s) { return s[0] == rows && s[1] == cols; }));
}

}  // namespace sppft
