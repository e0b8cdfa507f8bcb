// SPDX-License-Identifier: Apache-2.0
#include "sppft/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sppft/diagnostics.hpp"
#include "sppft/errors.hpp"

namespace sppft {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void check_dropout_p(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ArgumentError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
}

void check_scale(double s) {
  if (!std::isfinite(s)) throw ArgumentError("adapter scale must be finite");
}

bool all_zero(const Matrix& m) noexcept { return count_nonzero(m) == 0; }

void check_spp_against(const PrunedLayer& layer, const SppAdapter& ad) {
  const std::size_t m = layer.weight.rows();
  const std::size_t n = layer.weight.cols();
  if (ad.w_alpha.empty() || ad.w_beta.empty()) throw ShapeError("SPP adapter is empty");
  if (ad.w_beta.rows() != m || ad.w_beta.cols() != 1) {
    throw ShapeError("SPP w_beta is " + dims(ad.w_beta.rows(), ad.w_beta.cols()) +
                     ", layer needs " + dims(m, 1));
  }
  if (ad.w_alpha.cols() != n) {
    throw ShapeError("SPP w_alpha is " + dims(ad.w_alpha.rows(), ad.w_alpha.cols()) +
                     ", layer has " + std::to_string(n) + " input features");
  }
  if (m % ad.rank() != 0) {
    throw PatternError("SPP rank " + std::to_string(ad.rank()) + " does not divide " +
                       std::to_string(m) + " output rows");
  }
}

void check_input(const Matrix& x, const PrunedLayer& layer) {
  if (x.empty() || x.cols() != layer.weight.cols()) {
    throw ShapeError("input is " + dims(x.rows(), x.cols()) + ", layer expects " +
                     std::to_string(layer.weight.cols()) + " features");
  }
}

void check_drop_shape(const DropoutMask& drop, const Matrix& x) {
  if (drop.keep && (drop.keep->rows() != x.rows() || drop.keep->cols() != x.cols())) {
    throw ShapeError("dropout mask shape does not match input");
  }
}

Matrix drop_input(const Matrix& x, const DropoutMask& drop, Mode mode) {
  if (mode == Mode::eval) return x;
  check_drop_shape(drop, x);
  return dropout_reapply(x, drop);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

Dropped dropout_apply(const Matrix& x, double p, Rng& rng, Mode mode) {
  check_dropout_p(p);
  if (mode == Mode::eval || p == 0.0) return {x, DropoutMask{std::nullopt, p}};
  Matrix keep(x.rows(), x.cols());
  for (double& k : keep.data()) k = rng.next_unit() < p ? 0.0 : 1.0;
  DropoutMask mask{std::move(keep), p};
  Matrix out = dropout_reapply(x, mask);
  return {std::move(out), std::move(mask)};
}

Matrix dropout_reapply(const Matrix& x, const DropoutMask& mask) {
  if (mask.identity()) return x;
  check_drop_shape(mask, x);
  Matrix out = hadamard(x, *mask.keep);
  const double survivor = mask.survivor_scale();
  for (double& v : out.data()) v *= survivor;
  return out;
}

Matrix dropout_backward(const Matrix& grad, const DropoutMask& mask) {
  return dropout_reapply(grad, mask);
}

// ---------------------------------------------------------------------------
// SPP
// ---------------------------------------------------------------------------

SppAdapter make_spp_adapter(Matrix w_alpha, Matrix w_beta, double s, double p) {
  if (w_alpha.empty() || w_beta.empty()) throw ShapeError("SPP factors must be non-empty");
  if (w_beta.cols() != 1) {
    throw ShapeError("SPP w_beta must be a column, got " + dims(w_beta.rows(), w_beta.cols()));
  }
  if (w_beta.rows() % w_alpha.rows() != 0) {
    throw PatternError("SPP rank " + std::to_string(w_alpha.rows()) + " does not divide " +
                       std::to_string(w_beta.rows()) + " output rows");
  }
  check_scale(s);
  check_dropout_p(p);
  if (all_zero(w_alpha) && all_zero(w_beta)) {
    warn("SPP adapter has both w_alpha and w_beta identically zero; their gradients vanish and "
         "the adapter cannot learn");
  }
  return {std::move(w_alpha), std::move(w_beta), s, p};
}

SppAdapter spp_init(std::size_t m, std::size_t n, std::size_t r, double s, double p, Rng& rng,
                    SppInit init) {
  if (m == 0 || n == 0 || r == 0) throw ShapeError("spp_init: extents must be positive");
  if (m % r != 0) {
    throw PatternError("SPP rank " + std::to_string(r) + " does not divide " +
                       std::to_string(m) + " output rows");
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  const bool random_alpha = init == SppInit::beta_zero || init == SppInit::none_zero;
  const bool random_beta = init == SppInit::alpha_zero || init == SppInit::none_zero;
  Matrix alpha = random_alpha ? rng_uniform(rng, -bound, bound, r, n) : Matrix(r, n);
  Matrix beta = random_beta ? rng_uniform(rng, -bound, bound, m, 1) : Matrix(m, 1);
  return make_spp_adapter(std::move(alpha), std::move(beta), s, p);
}

Matrix spp_effective_weight(const PrunedLayer& layer, const SppAdapter& ad) {
  check_spp_against(layer, ad);
  const Matrix& w = layer.weight;
  const std::size_t block = ad.block_rows();
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const auto alpha = ad.w_alpha.row(i / block);
    const double beta = ad.w_beta(i, 0);
    for (std::size_t c = 0; c < w.cols(); ++c) out(i, c) = w(i, c) * alpha[c] * beta;
  }
  return out;
}

SppForward spp_forward_naive(const Matrix& x, const PrunedLayer& layer, const SppAdapter& ad,
                             Rng& rng, Mode mode) {
  check_input(x, layer);
  auto dropped = dropout_apply(x, ad.p, rng, mode);
  return spp_forward_naive(x, layer, ad, dropped.mask, mode);
}

SppForward spp_forward_naive(const Matrix& x, const PrunedLayer& layer, const SppAdapter& ad,
                             const DropoutMask& drop, Mode mode) {
  check_input(x, layer);
  check_spp_against(layer, ad);
  Matrix xd = drop_input(x, drop, mode);
  Matrix y = matmul(x, layer.weight);
  const Matrix branch = matmul(xd, spp_effective_weight(layer, ad));
  auto out = y.data();
  auto br = branch.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += ad.s * br[i];

  SppForward result{std::move(y), {}};
  if (mode == Mode::train) {
    result.cache = SppCache{true, &layer, std::move(xd), drop, ad.w_alpha, ad.w_beta, ad.s};
  }
  return result;
}

SppForward spp_forward_optimized(const Matrix& x, const PrunedLayer& layer, const SppAdapter& ad,
                                 Rng& rng, Mode mode) {
  check_input(x, layer);
  auto dropped = dropout_apply(x, ad.p, rng, mode);
  return spp_forward_optimized(x, layer, ad, dropped.mask, mode);
}

SppForward spp_forward_optimized(const Matrix& x, const PrunedLayer& layer,
                                 const SppAdapter& ad, const DropoutMask& drop, Mode mode) {
  check_input(x, layer);
  check_spp_against(layer, ad);
  const Matrix& w = layer.weight;
  const std::size_t batch = x.rows();
  const std::size_t n = w.cols();
  const std::size_t block = ad.block_rows();

  Matrix xd = drop_input(x, drop, mode);
  Matrix y = matmul(x, w);
  Matrix scaled(batch, n);  // drop(x) ⊙ alpha_j, reused across blocks
  for (std::size_t j = 0; j < ad.rank(); ++j) {
    const auto alpha = ad.w_alpha.row(j);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto src = xd.row(b);
      auto dst = scaled.row(b);
      for (std::size_t c = 0; c < n; ++c) dst[c] = src[c] * alpha[c];
    }
    for (std::size_t i = j * block; i < (j + 1) * block; ++i) {
      const auto wi = w.row(i);
      const double beta = ad.w_beta(i, 0);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto xs = scaled.row(b);
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += xs[c] * wi[c];
        y(b, i) += ad.s * (acc * beta);
      }
    }
  }

  SppForward result{std::move(y), {}};
  if (mode == Mode::train) {
    result.cache = SppCache{true, &layer, std::move(xd), drop, ad.w_alpha, ad.w_beta, ad.s};
  }
  return result;
}

SppGrads spp_backward(const SppCache& cache, const Matrix& d_y) {
  if (!cache.ready || cache.layer == nullptr) {
    throw StateError("spp_backward needs the cache of a training-mode forward");
  }
  const Matrix& w = cache.layer->weight;
  const Matrix& xd = cache.x_dropped;
  const std::size_t batch = xd.rows();
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  if (d_y.rows() != batch || d_y.cols() != m) {
    throw ShapeError("spp_backward: d_y is " + dims(d_y.rows(), d_y.cols()) + ", expected " +
                     dims(batch, m));
  }
  const std::size_t rank = cache.w_alpha.rows();
  const std::size_t block = m / rank;

  Matrix d_alpha(rank, n);
  Matrix d_beta(m, 1);
  Matrix d_xd(batch, n);  // gradient reaching drop(x) through the adapter branch
  Matrix h(batch, n);     // per block: sum_i d_y[:, i] * beta_i * w_i
  for (std::size_t j = 0; j < rank; ++j) {
    const auto alpha = cache.w_alpha.row(j);
    std::ranges::fill(h.data(), 0.0);
    for (std::size_t i = j * block; i < (j + 1) * block; ++i) {
      const auto wi = w.row(i);
      const double beta = cache.w_beta(i, 0);
      double beta_grad = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double g = d_y(b, i);
        const auto xb = xd.row(b);
        double z = 0.0;  // pre-beta output of row i for sample b
        for (std::size_t c = 0; c < n; ++c) z += (xb[c] * alpha[c]) * wi[c];
        beta_grad += g * z;
        const double gb = g * beta;
        auto hb = h.row(b);
        for (std::size_t c = 0; c < n; ++c) hb[c] += gb * wi[c];
      }
      d_beta(i, 0) = cache.s * beta_grad;
    }
    auto da = d_alpha.row(j);
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) acc += xd(b, c) * h(b, c);
      da[c] = cache.s * acc;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      auto dst = d_xd.row(b);
      const auto hb = h.row(b);
      for (std::size_t c = 0; c < n; ++c) dst[c] += alpha[c] * hb[c];
    }
  }

  Matrix d_x = matmul_nn(d_y, w);
  const Matrix through_drop = dropout_backward(d_xd, cache.drop);
  auto dx = d_x.data();
  auto td = through_drop.data();
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += cache.s * td[i];
  return {std::move(d_alpha), std::move(d_beta), std::move(d_x)};
}

PrunedLayer spp_merge(const PrunedLayer& layer, const SppAdapter& ad) {
  const Matrix effective = spp_effective_weight(layer, ad);
  Matrix merged(layer.weight);
  auto out = merged.data();
  auto eff = effective.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += ad.s * eff[i];
  return {std::move(merged), layer.mask};
}

// ---------------------------------------------------------------------------
// LoRA
// ---------------------------------------------------------------------------

LoraAdapter make_lora_adapter(Matrix a, Matrix b, double s, double p) {
  if (a.empty() || b.empty()) throw ShapeError("LoRA factors must be non-empty");
  if (b.cols() != a.rows()) {
    throw ShapeError("LoRA b is " + dims(b.rows(), b.cols()) + " but a is " +
                     dims(a.rows(), a.cols()));
  }
  check_scale(s);
  check_dropout_p(p);
  return {std::move(a), std::move(b), s, p};
}

LoraAdapter lora_init(std::size_t m, std::size_t n, std::size_t r, double s, double p, Rng& rng) {
  if (m == 0 || n == 0 || r == 0) throw ShapeError("lora_init: extents must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  Matrix a = rng_uniform(rng, -bound, bound, r, n);
  return make_lora_adapter(std::move(a), Matrix(m, r), s, p);
}

LoraForward lora_forward(const Matrix& x, const PrunedLayer& layer, const LoraAdapter& ad,
                         Rng& rng, Mode mode) {
  check_input(x, layer);
  auto dropped = dropout_apply(x, ad.p, rng, mode);
  return lora_forward(x, layer, ad, dropped.mask, mode);
}

LoraForward lora_forward(const Matrix& x, const PrunedLayer& layer, const LoraAdapter& ad,
                         const DropoutMask& drop, Mode mode) {
  check_input(x, layer);
  if (ad.a.cols() != layer.weight.cols() || ad.b.rows() != layer.weight.rows() ||
      ad.b.cols() != ad.a.rows()) {
    throw ShapeError("LoRA factors " + dims(ad.b.rows(), ad.b.cols()) + " x " +
                     dims(ad.a.rows(), ad.a.cols()) + " do not fit layer " +
                     dims(layer.weight.rows(), layer.weight.cols()));
  }
  Matrix xd = drop_input(x, drop, mode);
  Matrix projected = matmul(xd, ad.a);
  const Matrix branch = matmul(projected, ad.b);
  Matrix y = matmul(x, layer.weight);
  auto out = y.data();
  auto br = branch.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += ad.s * br[i];

  LoraForward result{std::move(y), {}};
  if (mode == Mode::train) {
    result.cache =
        LoraCache{true, &layer, std::move(xd), drop, std::move(projected), ad.a, ad.b, ad.s};
  }
  return result;
}

LoraGrads lora_backward(const LoraCache& cache, const Matrix& d_y) {
  if (!cache.ready || cache.layer == nullptr) {
    throw StateError("lora_backward needs the cache of a training-mode forward");
  }
  const Matrix& w = cache.layer->weight;
  if (d_y.rows() != cache.x_dropped.rows() || d_y.cols() != w.rows()) {
    throw ShapeError("lora_backward: d_y is " + dims(d_y.rows(), d_y.cols()) + ", expected " +
                     dims(cache.x_dropped.rows(), w.rows()));
  }
  Matrix d_b = scale(matmul_tn(d_y, cache.projected), cache.s);
  const Matrix g_proj = matmul_nn(d_y, cache.b);  // b x r
  Matrix d_a = scale(matmul_tn(g_proj, cache.x_dropped), cache.s);
  Matrix d_x = matmul_nn(d_y, w);
  const Matrix through_drop = dropout_backward(matmul_nn(g_proj, cache.a), cache.drop);
  auto dx = d_x.data();
  auto td = through_drop.data();
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += cache.s * td[i];
  return {std::move(d_a), std::move(d_b), std::move(d_x)};
}

Matrix lora_merge_dense(const PrunedLayer& layer, const LoraAdapter& ad) {
  const Matrix delta = matmul_nn(ad.b, ad.a);
  if (delta.rows() != layer.weight.rows() || delta.cols() != layer.weight.cols()) {
    throw ShapeError("LoRA update does not match layer shape");
  }
  Matrix merged(layer.weight);
  auto out = merged.data();
  auto d = delta.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += ad.s * d[i];
  return merged;
}

PrunedLayer lora_star_reprune(const Matrix& dense, const SparseMask& original_mask) {
  return apply_mask(dense, original_mask);
}

}  // namespace sppft
