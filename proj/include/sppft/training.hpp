// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sppft/adapters.hpp"
#include "sppft/numerics.hpp"
#include "sppft/pruning.hpp"

namespace sppft {

enum class Activation { identity, relu };
enum class LossKind { mse, cross_entropy };

using LayerAdapter = std::variant<std::monostate, SppAdapter, LoraAdapter>;

struct NetLayer {
  std::string name;
  PrunedLayer base;
  LayerAdapter adapter;
  Activation activation = Activation::identity;

  bool has_adapter() const noexcept { return !std::holds_alternative<std::monostate>(adapter); }
};

/// Stack of pruned linear layers, each optionally carrying an adapter.
struct ToyNet {
  std::vector<NetLayer> layers;
  LossKind loss = LossKind::mse;

  /// Throws ShapeError unless consecutive layers chain (n_{i+1} == m_i).
  void validate() const;
  bool has_adapters() const noexcept;
  std::size_t in_features() const;
  std::size_t out_features() const;
};

struct Dataset {
  Matrix x;
  Matrix y;

  std::size_t size() const noexcept { return x.rows(); }
};

/// Eval-mode forward of the whole stack.
Matrix net_forward(const ToyNet& net, const Matrix& x);

double loss_value(LossKind kind, const Matrix& prediction, const Matrix& target);
Matrix loss_gradient(LossKind kind, const Matrix& prediction, const Matrix& target);

/// Eval-mode loss of `net` on the whole dataset.
double evaluate(const ToyNet& net, const Dataset& data);

/// Linear warmup from 0 to peak over floor(warmup_ratio * total) steps, then
/// linear decay reaching 0 at step == total.
double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments for one parameter; empty until the first step.
struct AdamState {
  Matrix m;
  Matrix v;
  std::size_t t = 0;
};

/// Bias-corrected Adam step with decoupled weight decay (applied first,
/// p <- p - lr * wd * p).
void adamw_step(Matrix& param, const Matrix& grad, AdamState& state, double lr,
                double weight_decay, const AdamHyper& hyper = {});

/// weight <- weight - lr * (grad ⊙ mask).
PrunedLayer fixed_mask_sgd_step(const PrunedLayer& layer, const Matrix& grad, double lr);

enum class Optimizer { sgd, adamw };

/// adapters: only adapter parameters move. fixed_mask: the base weights
/// move on their mask support and the net must carry no adapters.
enum class TrainTarget { adapters, fixed_mask };

struct TrainConfig {
  double lr = 1e-3;
  std::size_t steps = 500;
  std::size_t batch_size = 32;
  double warmup_ratio = 0.03;
  double weight_decay = 0.001;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adamw;
  TrainTarget target = TrainTarget::adapters;
  bool optimized_forward = true;

  void validate() const;
  std::size_t warmup_steps() const;
};

struct StepRecord {
  std::size_t step;
  double lr;
  double loss;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct RunRecord {
  std::vector<StepRecord> steps;
  double train_loss = 0.0;
  std::optional<double> eval_loss;
  std::size_t nnz_before = 0;
  std::size_t nnz_after = 0;

  /// "step,lr,loss" header plus one line per step, values at round-trip precision.
  std::string to_csv() const;
  /// Final metrics as a JSON object.
  std::string summary_json() const;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct TrainResult {
  ToyNet net;
  RunRecord record;
};

using StepObserver = std::function<void(std::size_t step, const ToyNet& net)>;

/// Fine-tunes `net` on minibatches drawn from `data`. Deterministic in
/// cfg.seed. Throws DivergenceError on a non-finite loss.
TrainResult train(ToyNet net, const Dataset& data, const TrainConfig& cfg,
                  const Dataset* eval_data = nullptr, const StepObserver& observer = {});

/// Folds every adapter into its layer. SPP layers keep their mask; LoRA
/// layers become dense, or are repruned with the original mask when
/// `reprune_lora` is set.
ToyNet merge_adapters(const ToyNet& net, bool reprune_lora = false);

/// Total nonzeros across all base weights.
std::size_t total_nonzero(const ToyNet& net);

struct TeacherStudent {
  ToyNet teacher;
  ToyNet student;  // magnitude-pruned copy of the teacher
  Dataset train;
  Dataset eval;    // samples / 4 held-out pairs
};

/// Dense random linear teacher (m x n) labelling correlated unit-variance
/// inputs (independent noise plus n/8 shared latent factors); the student is
/// the teacher pruned under `sparsity`.
TeacherStudent make_teacher_student(std::uint64_t seed, std::size_t m, std::size_t n,
                                    const SparsityPattern& sparsity, std::size_t samples);

}  // namespace sppft
