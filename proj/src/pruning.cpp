// SPDX-License-Identifier: Apache-2.0
#include "sppft/pruning.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <vector>

#include "sppft/errors.hpp"

namespace sppft {

namespace {

// floor(ratio * count), tolerant of products such as 0.29 * 100 that land
// one ulp under an integer.
std::size_t floor_fraction(double ratio, std::size_t count) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(count) + 1e-9));
}

std::size_t parse_count(std::string_view text, std::string_view whole) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw PatternError("cannot parse sparsity pattern '" + std::string(whole) + "'");
  }
  return value;
}

// Zeroes the `prune` lowest-scoring positions among `idx` (flat indices).
// Equal scores prune the larger index first so the smaller one survives.
void prune_lowest(const Matrix& scores, std::vector<std::size_t>& idx, std::size_t prune,
                  Matrix& mask) {
  auto s = scores.data();
  std::ranges::sort(idx, [&](std::size_t a, std::size_t b) {
    if (s[a] != s[b]) return s[a] < s[b];
    return a > b;
  });
  auto m = mask.data();
  for (std::size_t i = 0; i < prune; ++i) m[idx[i]] = 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// SparsityPattern
// ---------------------------------------------------------------------------

SparsityPattern SparsityPattern::unstructured(double ratio, bool row_wise) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw PatternError("unstructured ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  return SparsityPattern(Unstructured{ratio, row_wise});
}

SparsityPattern SparsityPattern::n_of_m(std::size_t keep, std::size_t group) {
  if (keep == 0 || keep >= group) {
    throw PatternError("N:M pattern requires 0 < N < M, got " + std::to_string(keep) + ":" +
                       std::to_string(group));
  }
  return SparsityPattern(NofM{keep, group});
}

SparsityPattern SparsityPattern::parse(std::string_view text, double ratio, bool row_wise) {
  if (text == "unstructured") return unstructured(ratio, row_wise);
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw PatternError("unknown sparsity pattern '" + std::string(text) + "'");
  }
  return n_of_m(parse_count(text.substr(0, colon), text), parse_count(text.substr(colon + 1), text));
}

std::string SparsityPattern::label() const {
  if (const auto* nm = std::get_if<NofM>(&kind_)) {
    return std::to_string(nm->keep) + ":" + std::to_string(nm->group);
  }
  return "unstructured";
}

double SparsityPattern::ratio() const noexcept {
  if (const auto* nm = std::get_if<NofM>(&kind_)) {
    return 1.0 - static_cast<double>(nm->keep) / static_cast<double>(nm->group);
  }
  return std::get<Unstructured>(kind_).ratio;
}

void SparsityPattern::validate_for(std::size_t rows, std::size_t cols) const {
  if (rows == 0 || cols == 0) throw PatternError("pattern applied to an empty matrix");
  if (const auto* nm = std::get_if<NofM>(&kind_)) {
    if (cols % nm->group != 0) {
      throw PatternError("column count " + std::to_string(cols) + " is not divisible by " +
                         label() + " group size " + std::to_string(nm->group));
    }
  }
}

std::size_t SparsityPattern::expected_zeros(std::size_t rows, std::size_t cols) const {
  if (const auto* nm = std::get_if<NofM>(&kind_)) {
    return rows * (cols / nm->group) * (nm->group - nm->keep);
  }
  const auto& u = std::get<Unstructured>(kind_);
  if (u.row_wise) return rows * floor_fraction(u.ratio, cols);
  return floor_fraction(u.ratio, rows * cols);
}

bool operator==(const SparsityPattern& a, const SparsityPattern& b) noexcept {
  if (a.kind_.index() != b.kind_.index()) return false;
  if (const auto* x = std::get_if<SparsityPattern::NofM>(&a.kind_)) {
    const auto& y = std::get<SparsityPattern::NofM>(b.kind_);
    return x->keep == y.keep && x->group == y.group;
  }
  const auto& x = std::get<SparsityPattern::Unstructured>(a.kind_);
  const auto& y = std::get<SparsityPattern::Unstructured>(b.kind_);
  return x.ratio == y.ratio && x.row_wise == y.row_wise;
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

Matrix score_magnitude(const Matrix& w) {
  Matrix out(w);
  for (double& v : out.data()) v = std::abs(v);
  return out;
}

Matrix score_wanda(const Matrix& w, const CalibrationStats& stats) {
  const Matrix& norms = stats.col_norms;
  if (norms.rows() != 1 || norms.cols() != w.cols()) {
    throw ShapeError("score_wanda: expected 1x" + std::to_string(w.cols()) +
                     " column norms, got " + std::to_string(norms.rows()) + "x" +
                     std::to_string(norms.cols()));
  }
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) out(i, j) = std::abs(w(i, j)) * norms(0, j);
  }
  return out;
}

CalibrationStats collect_calibration(const Matrix& xs) {
  if (xs.empty()) throw ShapeError("collect_calibration: empty batch");
  Matrix norms(1, xs.cols());
  for (std::size_t j = 0; j < xs.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.rows(); ++i) acc += xs(i, j) * xs(i, j);
    norms(0, j) = std::sqrt(acc);
  }
  return {std::move(norms)};
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

SparseMask build_mask(const Matrix& scores, const SparsityPattern& pattern) {
  if (scores.empty()) throw ShapeError("build_mask: empty scores");
  pattern.validate_for(scores.rows(), scores.cols());
  const std::size_t rows = scores.rows();
  const std::size_t cols = scores.cols();
  Matrix mask(rows, cols, 1.0);

  if (pattern.is_n_of_m()) {
    const auto [keep, group] = pattern.as_n_of_m();
    std::vector<std::size_t> idx(group);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t g = 0; g < cols; g += group) {
        std::iota(idx.begin(), idx.end(), i * cols + g);
        prune_lowest(scores, idx, group - keep, mask);
      }
    }
    return {std::move(mask), pattern};
  }

  const auto& u = pattern.as_unstructured();
  if (u.row_wise) {
    const std::size_t prune = floor_fraction(u.ratio, cols);
    std::vector<std::size_t> idx(cols);
    for (std::size_t i = 0; i < rows; ++i) {
      std::iota(idx.begin(), idx.end(), i * cols);
      prune_lowest(scores, idx, prune, mask);
    }
  } else {
    std::vector<std::size_t> idx(rows * cols);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    prune_lowest(scores, idx, floor_fraction(u.ratio, rows * cols), mask);
  }
  return {std::move(mask), pattern};
}

PrunedLayer apply_mask(const Matrix& w, const SparseMask& mask) {
  Matrix out = hadamard(w, mask.mask);
  // -w * 0 is -0.0; store a plain zero so masked entries serialize identically
  for (double& v : out.data()) {
    if (v == 0.0) v = 0.0;
  }
  return {std::move(out), mask};
}

MaskReport verify_mask(const PrunedLayer& layer) {
  MaskReport report;
  const Matrix& w = layer.weight;
  const Matrix& m = layer.mask.mask;
  if (w.empty() || w.rows() != m.rows() || w.cols() != m.cols()) {
    report.detail = "weight and mask shapes differ";
    return report;
  }
  report.total = w.size();
  report.nnz = count_nonzero(w);

  bool binary = true;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const double keep = m(i, j);
      if (keep != 0.0 && keep != 1.0) binary = false;
      if (keep == 0.0) {
        ++report.mask_zeros;
        if (w(i, j) != 0.0) {
          if (!report.first_violation) report.first_violation = {i, j};
          ++report.violations;
        }
      }
    }
  }
  report.ratio = static_cast<double>(report.mask_zeros) / static_cast<double>(report.total);

  const auto& pattern = layer.mask.pattern;
  std::string pattern_detail;
  if (!binary) {
    pattern_detail = "mask has non-binary entries";
  } else if (pattern.is_n_of_m()) {
    const auto [keep, group] = pattern.as_n_of_m();
    if (w.cols() % group != 0) {
      pattern_detail = "columns not divisible by group size";
    } else {
      for (std::size_t i = 0; i < m.rows() && pattern_detail.empty(); ++i) {
        for (std::size_t g = 0; g < m.cols(); g += group) {
          std::size_t ones = 0;
          for (std::size_t k = 0; k < group; ++k) ones += m(i, g + k) != 0.0;
          if (ones != keep) {
            pattern_detail = "group at (" + std::to_string(i) + "," + std::to_string(g) +
                             ") keeps " + std::to_string(ones) + ", expected " +
                             std::to_string(keep);
            break;
          }
        }
      }
    }
  } else {
    const std::size_t expected = pattern.expected_zeros(w.rows(), w.cols());
    if (pattern.as_unstructured().row_wise) {
      const std::size_t per_row = expected / w.rows();
      for (std::size_t i = 0; i < m.rows() && pattern_detail.empty(); ++i) {
        std::size_t zeros = 0;
        for (double v : m.row(i)) zeros += v == 0.0;
        if (zeros != per_row) {
          pattern_detail = "row " + std::to_string(i) + " has " + std::to_string(zeros) +
                           " zeros, expected " + std::to_string(per_row);
        }
      }
    } else if (report.mask_zeros != expected) {
      pattern_detail = "mask has " + std::to_string(report.mask_zeros) + " zeros, expected " +
                       std::to_string(expected);
    }
  }
  report.pattern_ok = pattern_detail.empty();

  if (report.first_violation) {
    report.detail = "nonzero weight at masked position (" +
                    std::to_string(report.first_violation->first) + "," +
                    std::to_string(report.first_violation->second) + ")";
    if (report.violations > 1) {
      report.detail += " and " + std::to_string(report.violations - 1) + " more";
    }
  }
  if (!report.pattern_ok) {
    if (!report.detail.empty()) report.detail += "; ";
    report.detail += pattern_detail;
  }
  report.pass = report.pattern_ok && report.violations == 0;
  return report;
}

}  // namespace sppft
