// SPDX-License-Identifier: Apache-2.0
// Helpers shared by the test binaries: random pruned layers, reference
// oracles and a scratch directory.
#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sppft/adapters.hpp"
#include "sppft/numerics.hpp"
#include "sppft/pruning.hpp"

namespace sppft::testing {

/// Plain triple loop, same ascending order as the library reference.
inline Matrix triple_loop_matmul(const Matrix& a, const Matrix& b_t) {
  Matrix out(a.rows(), b_t.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b_t.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b_t(j, k);
      out(i, j) = acc;
    }
  }
  return out;
}

inline PrunedLayer random_pruned(Rng& rng, std::size_t m, std::size_t n,
                                 const SparsityPattern& pattern) {
  const Matrix w = rng_uniform(rng, -1.0, 1.0, m, n);
  return apply_mask(w, build_mask(score_magnitude(w), pattern));
}

inline std::vector<std::size_t> divisors(std::size_t m) {
  std::vector<std::size_t> out;
  for (std::size_t r = 1; r <= m; ++r) {
    if (m % r == 0) out.push_back(r);
  }
  return out;
}

/// Central difference of a scalar function of one matrix, entry by entry.
inline Matrix numeric_gradient(Matrix& param, const std::function<double()>& loss,
                               double h = 1e-5) {
  Matrix g(param.rows(), param.cols());
  for (std::size_t i = 0; i < param.rows(); ++i) {
    for (std::size_t j = 0; j < param.cols(); ++j) {
      const double saved = param(i, j);
      param(i, j) = saved + h;
      const double up = loss();
      param(i, j) = saved - h;
      const double down = loss();
      param(i, j) = saved;
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("sppft_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sppft::testing
