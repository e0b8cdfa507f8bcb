// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

#include "sppft/numerics.hpp"

namespace sppft {

/// Which entries a mask keeps: a global (or per-row) fraction of zeros, or
/// exactly `keep` nonzeros in every contiguous run of `group` columns.
class SparsityPattern {
 public:
  struct Unstructured {
    double ratio;
    bool row_wise;
  };
  struct NofM {
    std::size_t keep;
    std::size_t group;
  };

  static SparsityPattern unstructured(double ratio, bool row_wise = false);
  static SparsityPattern n_of_m(std::size_t keep, std::size_t group);

  /// Parses "unstructured" (uses `ratio`) or "N:M".
  static SparsityPattern parse(std::string_view text, double ratio = 0.0, bool row_wise = false);

  bool is_n_of_m() const noexcept { return std::holds_alternative<NofM>(kind_); }
  const Unstructured& as_unstructured() const { return std::get<Unstructured>(kind_); }
  const NofM& as_n_of_m() const { return std::get<NofM>(kind_); }

  /// "2:4" style for N:M, otherwise "unstructured".
  std::string label() const;

  /// Nominal fraction of zeros.
  double ratio() const noexcept;

  /// Throws PatternError if a rows x cols matrix cannot carry this pattern.
  void validate_for(std::size_t rows, std::size_t cols) const;

  /// Exact number of zeros a compliant rows x cols mask has.
  std::size_t expected_zeros(std::size_t rows, std::size_t cols) const;

  friend bool operator==(const SparsityPattern& a, const SparsityPattern& b) noexcept;

 private:
  explicit SparsityPattern(std::variant<Unstructured, NofM> kind) : kind_(kind) {}
  std::variant<Unstructured, NofM> kind_;
};

/// Binary keep-mask (entries 0 or 1) with the pattern that produced it.
struct SparseMask {
  Matrix mask;
  SparsityPattern pattern;
};

/// Frozen sparse weight W~ = W ⊙ M together with its mask. The invariant
/// (weight is zero wherever the mask is) is checked by verify_mask rather
/// than enforced, so corrupted checkpoints can still be inspected.
struct PrunedLayer {
  Matrix weight;
  SparseMask mask;

  std::size_t out_features() const noexcept { return weight.rows(); }
  std::size_t in_features() const noexcept { return weight.cols(); }
};

/// Per-input-feature activation L2 norms over a calibration batch (1 x n).
struct CalibrationStats {
  Matrix col_norms;
};

Matrix score_magnitude(const Matrix& w);

/// |w[i][j]| * col_norms[j].
Matrix score_wanda(const Matrix& w, const CalibrationStats& stats);

CalibrationStats collect_calibration(const Matrix& xs);

/// Keeps the highest scores under `pattern`. Ties keep the entry with the
/// smaller (row, col) index.
SparseMask build_mask(const Matrix& scores, const SparsityPattern& pattern);

PrunedLayer apply_mask(const Matrix& w, const SparseMask& mask);

struct MaskReport {
  bool pass = false;
  bool pattern_ok = false;
  std::size_t total = 0;
  std::size_t nnz = 0;         // nonzeros in the weight
  std::size_t mask_zeros = 0;  // zeros in the mask
  double ratio = 0.0;          // mask_zeros / total
  std::size_t violations = 0;  // nonzero weights under a zero mask entry
  std::optional<std::pair<std::size_t, std::size_t>> first_violation;
  std::string detail;
};

MaskReport verify_mask(const PrunedLayer& layer);

}  // namespace sppft
