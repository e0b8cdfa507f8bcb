// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>

#include "sppft/numerics.hpp"
#include "sppft/pruning.hpp"

namespace sppft {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted-dropout keep mask. An absent `keep` matrix means identity.
struct DropoutMask {
  std::optional<Matrix> keep;
  double p = 0.0;

  bool identity() const noexcept { return !keep.has_value(); }
  double survivor_scale() const noexcept { return 1.0 / (1.0 - p); }
};

struct Dropped {
  Matrix x;
  DropoutMask mask;
};

/// Zeroes each entry with probability p and scales survivors by 1/(1-p).
/// Identity (no randomness consumed) in eval mode or when p == 0.
Dropped dropout_apply(const Matrix& x, double p, Rng& rng, Mode mode);

/// Applies a previously drawn mask to x.
Matrix dropout_reapply(const Matrix& x, const DropoutMask& mask);

/// Gradient of dropout_reapply with respect to its input.
Matrix dropout_backward(const Matrix& grad, const DropoutMask& mask);

// ---------------------------------------------------------------------------
// SPP adapter
// ---------------------------------------------------------------------------

/// Multiplicative adapter: row factor w_beta (m x 1) and block-row factor
/// w_alpha (r x n). Row i of the layer is scaled by alpha row i / (m / r).
struct SppAdapter {
  Matrix w_alpha;
  Matrix w_beta;
  double s = 1.0;
  double p = 0.05;

  std::size_t rank() const noexcept { return w_alpha.rows(); }
  /// Layer rows sharing one alpha row.
  std::size_t block_rows() const noexcept { return w_beta.rows() / w_alpha.rows(); }
  /// r == m: every layer row owns its alpha row.
  bool full_parameter() const noexcept { return w_alpha.rows() == w_beta.rows(); }
};

enum class SppInit {
  beta_zero,   // alpha random, beta zero (default)
  alpha_zero,  // alpha zero, beta random
  none_zero,   // both random
  both_zero,   // both zero; gradients vanish, emits a warning
};

/// Validates shapes (r | m, scale finite, p in [0,1)) and warns when both
/// factors are identically zero.
SppAdapter make_spp_adapter(Matrix w_alpha, Matrix w_beta, double s, double p);

/// Random factors are drawn i.i.d. uniform in [-1/sqrt(n), 1/sqrt(n)].
SppAdapter spp_init(std::size_t m, std::size_t n, std::size_t r, double s, double p, Rng& rng,
                    SppInit init = SppInit::beta_zero);

/// W~ ⊙ repeat_rows(w_alpha, m/r) ⊙ broadcast_col(w_beta, n).
Matrix spp_effective_weight(const PrunedLayer& layer, const SppAdapter& ad);

/// State a training-mode forward keeps for backward. Holds a non-owning
/// pointer to the frozen layer, which must outlive the cache.
struct SppCache {
  bool ready = false;
  const PrunedLayer* layer = nullptr;
  Matrix x_dropped;
  DropoutMask drop;
  Matrix w_alpha;
  Matrix w_beta;
  double s = 0.0;
};

struct SppForward {
  Matrix y;
  SppCache cache;
};

/// y = x W~^T + s * drop(x) W~'^T with W~' materialized.
SppForward spp_forward_naive(const Matrix& x, const PrunedLayer& layer, const SppAdapter& ad,
                             Rng& rng, Mode mode);
SppForward spp_forward_naive(const Matrix& x, const PrunedLayer& layer, const SppAdapter& ad,
                             const DropoutMask& drop, Mode mode);

/// Same contract as the naive path, computed block by block: for each alpha
/// row j the alpha-scaled input multiplies the j-th run of m/r weight rows,
/// and the concatenated result is scaled per column by beta. Never forms an
/// m x n temporary.
SppForward spp_forward_optimized(const Matrix& x, const PrunedLayer& layer, const SppAdapter& ad,
                                 Rng& rng, Mode mode);
SppForward spp_forward_optimized(const Matrix& x, const PrunedLayer& layer,
                                 const SppAdapter& ad, const DropoutMask& drop, Mode mode);

struct SppGrads {
  Matrix d_alpha;  // r x n
  Matrix d_beta;   // m x 1
  Matrix d_x;      // b x n
};

/// Gradients of the adapter forward given dL/dy. Works block-wise like the
/// optimized forward. Throws StateError for an eval-mode cache.
SppGrads spp_backward(const SppCache& cache, const Matrix& d_y);

/// Folds the adapter into the weight: W~ + s * W~'. The mask is carried
/// over unchanged.
PrunedLayer spp_merge(const PrunedLayer& layer, const SppAdapter& ad);

// ---------------------------------------------------------------------------
// LoRA baseline
// ---------------------------------------------------------------------------

/// Additive low-rank adapter: a (r x n), b (m x r).
struct LoraAdapter {
  Matrix a;
  Matrix b;
  double s = 1.0;
  double p = 0.05;

  std::size_t rank() const noexcept { return a.rows(); }
};

LoraAdapter make_lora_adapter(Matrix a, Matrix b, double s, double p);

/// a uniform in [-1/sqrt(n), 1/sqrt(n)], b zero.
LoraAdapter lora_init(std::size_t m, std::size_t n, std::size_t r, double s, double p, Rng& rng);

struct LoraCache {
  bool ready = false;
  const PrunedLayer* layer = nullptr;
  Matrix x_dropped;
  DropoutMask drop;
  Matrix projected;  // drop(x) a^T, b x r
  Matrix a;
  Matrix b;
  double s = 0.0;
};

struct LoraForward {
  Matrix y;
  LoraCache cache;
};

/// y = x W~^T + s * (drop(x) a^T) b^T.
LoraForward lora_forward(const Matrix& x, const PrunedLayer& layer, const LoraAdapter& ad,
                         Rng& rng, Mode mode);
LoraForward lora_forward(const Matrix& x, const PrunedLayer& layer, const LoraAdapter& ad,
                         const DropoutMask& drop, Mode mode);

struct LoraGrads {
  Matrix d_a;
  Matrix d_b;
  Matrix d_x;
};

LoraGrads lora_backward(const LoraCache& cache, const Matrix& d_y);

/// W~ + s * b a as a plain dense matrix. Generally fills masked positions.
Matrix lora_merge_dense(const PrunedLayer& layer, const LoraAdapter& ad);

/// Re-applies the original pruning mask to a densified weight.
PrunedLayer lora_star_reprune(const Matrix& dense, const SparseMask& original_mask);

}  // namespace sppft
