// SPDX-License-Identifier: Apache-2.0
#include "sppft/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "sppft/errors.hpp"

namespace sppft {

namespace {

using LayerCache = std::variant<std::monostate, SppCache, LoraCache>;

struct LayerTrace {
  Matrix input;
  Matrix pre;  // pre-activation output
  LayerCache cache;
};

Matrix apply_activation(Activation act, Matrix z) {
  if (act == Activation::relu) {
    for (double& v : z.data()) v = v > 0.0 ? v : 0.0;
  }
  return z;
}

Matrix activation_backward(Activation act, const Matrix& pre, Matrix grad) {
  if (act == Activation::relu) {
    auto g = grad.data();
    auto z = pre.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(z[i] > 0.0)) g[i] = 0.0;
    }
  }
  return grad;
}

Matrix layer_forward(const NetLayer& layer, const Matrix& x, Rng& rng, Mode mode, bool optimized,
                     LayerCache* cache) {
  if (const auto* spp = std::get_if<SppAdapter>(&layer.adapter)) {
    auto out = optimized ? spp_forward_optimized(x, layer.base, *spp, rng, mode)
                         : spp_forward_naive(x, layer.base, *spp, rng, mode);
    if (cache != nullptr) *cache = std::move(out.cache);
    return std::move(out.y);
  }
  if (const auto* lora = std::get_if<LoraAdapter>(&layer.adapter)) {
    auto out = lora_forward(x, layer.base, *lora, rng, mode);
    if (cache != nullptr) *cache = std::move(out.cache);
    return std::move(out.y);
  }
  return matmul(x, layer.base.weight);
}

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::ranges::copy(src.row(idx[i]), out.row(i).begin());
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Trainable tensors of the net in a fixed order, with their gradients.
struct ParamSlot {
  Matrix* param;
  Matrix grad;
};

}  // namespace

// ---------------------------------------------------------------------------
// ToyNet
// ---------------------------------------------------------------------------

void ToyNet::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& w = layers[i].base.weight;
    if (w.empty()) throw ShapeError("layer " + std::to_string(i) + " has no weight");
    if (i + 1 < layers.size() && layers[i + 1].base.weight.cols() != w.rows()) {
      throw ShapeError("layer " + std::to_string(i + 1) + " expects " +
                       std::to_string(layers[i + 1].base.weight.cols()) + " inputs but layer " +
                       std::to_string(i) + " produces " + std::to_string(w.rows()));
    }
  }
}

bool ToyNet::has_adapters() const noexcept {
  return std::ranges::any_of(layers, [](const NetLayer& l) { return l.has_adapter(); });
}

std::size_t ToyNet::in_features() const { return layers.front().base.weight.cols(); }
std::size_t ToyNet::out_features() const { return layers.back().base.weight.rows(); }

Matrix net_forward(const ToyNet& net, const Matrix& x) {
  net.validate();
  Rng unused(0);
  Matrix h = x;
  for (const auto& layer : net.layers) {
    h = apply_activation(layer.activation, layer_forward(layer, h, unused, Mode::eval, true, nullptr));
  }
  return h;
}

double loss_value(LossKind kind, const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ShapeError("loss: prediction and target shapes differ");
  }
  const std::size_t rows = prediction.rows();
  const std::size_t cols = prediction.cols();
  if (kind == LossKind::mse) {
    double acc = 0.0;
    auto p = prediction.data();
    auto t = target.data();
    for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
    return acc / static_cast<double>(rows * cols);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const auto z = prediction.row(i);
    const double peak = *std::ranges::max_element(z);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - peak);
    const double log_norm = peak + std::log(sum);
    for (std::size_t j = 0; j < cols; ++j) acc -= target(i, j) * (z[j] - log_norm);
  }
  return acc / static_cast<double>(rows);
}

Matrix loss_gradient(LossKind kind, const Matrix& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ShapeError("loss: prediction and target shapes differ");
  }
  const std::size_t rows = prediction.rows();
  const std::size_t cols = prediction.cols();
  Matrix grad(rows, cols);
  if (kind == LossKind::mse) {
    const double factor = 2.0 / static_cast<double>(rows * cols);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      grad.data()[i] = factor * (prediction.data()[i] - target.data()[i]);
    }
    return grad;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const auto z = prediction.row(i);
    const double peak = *std::ranges::max_element(z);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - peak);
    double mass = 0.0;
    for (double t : target.row(i)) mass += t;
    for (std::size_t j = 0; j < cols; ++j) {
      const double prob = std::exp(z[j] - peak) / sum;
      grad(i, j) = (prob * mass - target(i, j)) / static_cast<double>(rows);
    }
  }
  return grad;
}

double evaluate(const ToyNet& net, const Dataset& data) {
  return loss_value(net.loss, net_forward(net, data.x), data.y);
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr, double warmup_ratio) {
  if (step >= total_steps) {
    throw ArgumentError("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + ")");
  }
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ArgumentError("lr_schedule: warmup ratio must lie in [0, 1)");
  }
  const auto warmup =
      static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) {
    return peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  return peak_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void adamw_step(Matrix& param, const Matrix& grad, AdamState& state, double lr,
                double weight_decay, const AdamHyper& hyper) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols()) {
    throw ShapeError("adamw_step: parameter and gradient shapes differ");
  }
  if (state.m.empty()) {
    state.m = Matrix(param.rows(), param.cols());
    state.v = Matrix(param.rows(), param.cols());
    state.t = 0;
  } else if (state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
    throw ShapeError("adamw_step: optimizer state shape differs from parameter");
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  auto p = param.data();
  auto g = grad.data();
  auto m = state.m.data();
  auto v = state.v.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] -= lr * weight_decay * p[i];
    m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
    v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    p[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

PrunedLayer fixed_mask_sgd_step(const PrunedLayer& layer, const Matrix& grad, double lr) {
  const Matrix masked = hadamard(grad, layer.mask.mask);
  PrunedLayer out = layer;
  auto w = out.weight.data();
  auto g = masked.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ArgumentError("learning rate must be positive");
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw ArgumentError("warmup ratio must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight decay must be nonnegative");
}

std::size_t TrainConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(steps)));
}

std::string RunRecord::to_csv() const {
  std::string out = "step,lr,loss\n";
  for (const auto& s : steps) {
    out += std::to_string(s.step) + "," + format_double(s.lr) + "," + format_double(s.loss) + "\n";
  }
  return out;
}

std::string RunRecord::summary_json() const {
  nlohmann::ordered_json j;
  j["steps"] = steps.size();
  j["train_loss"] = train_loss;
  j["eval_loss"] = eval_loss ? nlohmann::ordered_json(*eval_loss) : nlohmann::ordered_json(nullptr);
  j["nnz_before_merge"] = nnz_before;
  j["nnz_after_merge"] = nnz_after;
  return j.dump(2);
}

std::size_t total_nonzero(const ToyNet& net) {
  std::size_t total = 0;
  for (const auto& l : net.layers) total += count_nonzero(l.base.weight);
  return total;
}

ToyNet merge_adapters(const ToyNet& net, bool reprune_lora) {
  ToyNet out = net;
  for (auto& layer : out.layers) {
    if (const auto* spp = std::get_if<SppAdapter>(&layer.adapter)) {
      layer.base = spp_merge(layer.base, *spp);
    } else if (const auto* lora = std::get_if<LoraAdapter>(&layer.adapter)) {
      Matrix dense = lora_merge_dense(layer.base, *lora);
      if (reprune_lora) {
        layer.base = lora_star_reprune(dense, layer.base.mask);
      } else {
        layer.base.weight = std::move(dense);
      }
    }
    layer.adapter = std::monostate{};
  }
  return out;
}

TrainResult train(ToyNet net, const Dataset& data, const TrainConfig& cfg,
                  const Dataset* eval_data, const StepObserver& observer) {
  cfg.validate();
  net.validate();
  if (data.size() == 0 || data.x.empty() || data.y.empty()) {
    throw ArgumentError("training data is empty");
  }
  if (data.x.cols() != net.in_features() || data.y.cols() != net.out_features() ||
      data.y.rows() != data.x.rows()) {
    throw ShapeError("training data does not match network dimensions");
  }
  if (cfg.target == TrainTarget::fixed_mask && net.has_adapters()) {
    throw ArgumentError("fixed-mask retraining expects a network without adapters");
  }
  if (cfg.target == TrainTarget::adapters && !net.has_adapters() && cfg.steps > 0) {
    throw ArgumentError("adapter training requested but the network has no adapters");
  }

  RunRecord record;
  record.nnz_before = total_nonzero(net);

  Rng root(cfg.seed);
  Rng data_rng = root.split();
  Rng drop_rng = root.split();

  const std::size_t n_samples = data.size();
  const std::size_t batch = std::min(cfg.batch_size, n_samples);
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = n_samples;  // forces a shuffle before the first batch

  std::vector<AdamState> adam;
  std::vector<LayerTrace> traces(net.layers.size());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor + batch > n_samples) {
      for (std::size_t i = n_samples; i > 1; --i) std::swap(order[i - 1], order[data_rng.below(i)]);
      cursor = 0;
    }
    const std::span<const std::size_t> idx(order.data() + cursor, batch);
    cursor += batch;
    const Matrix xb = gather_rows(data.x, idx);
    const Matrix yb = gather_rows(data.y, idx);

    Matrix h = xb;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      auto& trace = traces[l];
      trace.input = h;
      trace.cache = std::monostate{};
      trace.pre = layer_forward(net.layers[l], h, drop_rng, Mode::train, cfg.optimized_forward,
                                &trace.cache);
      h = apply_activation(net.layers[l].activation, trace.pre);
    }
    const double loss = loss_value(net.loss, h, yb);
    if (!std::isfinite(loss)) {
      throw DivergenceError("non-finite loss at step " + std::to_string(step),
                            static_cast<long>(step) - 1);
    }
    const double lr = lr_schedule(step, cfg.steps, cfg.lr, cfg.warmup_ratio);
    record.steps.push_back({step, lr, loss});

    std::vector<ParamSlot> slots;
    Matrix grad = loss_gradient(net.loss, h, yb);
    for (std::size_t l = net.layers.size(); l-- > 0;) {
      auto& layer = net.layers[l];
      auto& trace = traces[l];
      grad = activation_backward(layer.activation, trace.pre, std::move(grad));
      if (auto* spp = std::get_if<SppAdapter>(&layer.adapter)) {
        auto g = spp_backward(std::get<SppCache>(trace.cache), grad);
        slots.push_back({&spp->w_beta, std::move(g.d_beta)});
        slots.push_back({&spp->w_alpha, std::move(g.d_alpha)});
        grad = std::move(g.d_x);
      } else if (auto* lora = std::get_if<LoraAdapter>(&layer.adapter)) {
        auto g = lora_backward(std::get<LoraCache>(trace.cache), grad);
        slots.push_back({&lora->b, std::move(g.d_b)});
        slots.push_back({&lora->a, std::move(g.d_a)});
        grad = std::move(g.d_x);
      } else {
        if (cfg.target == TrainTarget::fixed_mask) {
          slots.push_back({&layer.base.weight,
                           hadamard(matmul_tn(grad, trace.input), layer.base.mask.mask)});
        }
        if (l > 0) grad = matmul_nn(grad, layer.base.weight);
      }
    }
    // Slots were collected back to front; optimizer state follows that order.
    if (adam.size() < slots.size()) adam.resize(slots.size());
    for (std::size_t k = 0; k < slots.size(); ++k) {
      auto& slot = slots[k];
      if (cfg.optimizer == Optimizer::adamw) {
        adamw_step(*slot.param, slot.grad, adam[k], lr, cfg.weight_decay);
      } else {
        auto p = slot.param->data();
        auto g = slot.grad.data();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
      }
    }
    if (observer) observer(step, net);
  }

  record.train_loss = evaluate(net, data);
  if (eval_data != nullptr) record.eval_loss = evaluate(net, *eval_data);
  record.nnz_after = total_nonzero(merge_adapters(net));
  return {std::move(net), std::move(record)};
}

// ---------------------------------------------------------------------------
// Teacher / student
// ---------------------------------------------------------------------------

TeacherStudent make_teacher_student(std::uint64_t seed, std::size_t m, std::size_t n,
                                    const SparsityPattern& sparsity, std::size_t samples) {
  if (m == 0 || n == 0 || samples == 0) throw ShapeError("teacher-student extents must be positive");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(n));
  const Matrix w = rng_uniform(rng, -bound, bound, m, n);
  // Inputs mix independent noise with a few shared latent factors so that
  // features are correlated; with i.i.d. inputs the pruned teacher would
  // already be the best fit on its support and nothing could be recovered.
  const std::size_t factors = std::max<std::size_t>(n / 8, 1);
  const double unit = std::sqrt(3.0);
  const Matrix loading = rng_uniform(rng, -unit / std::sqrt(static_cast<double>(factors)),
                                     unit / std::sqrt(static_cast<double>(factors)), factors, n);
  auto draw_inputs = [&](std::size_t rows) {
    const Matrix noise = rng_uniform(rng, -unit, unit, rows, n);
    const Matrix shared = matmul_nn(rng_uniform(rng, -unit, unit, rows, factors), loading);
    return scale(add(noise, shared), std::sqrt(0.5));
  };
  Matrix x_train = draw_inputs(samples);
  Matrix x_eval = draw_inputs(std::max<std::size_t>(samples / 4, 1));

  const SparseMask dense_mask{Matrix(m, n, 1.0), SparsityPattern::unstructured(0.0)};
  ToyNet teacher;
  teacher.layers.push_back({"layer0", PrunedLayer{w, dense_mask}, std::monostate{}, Activation::identity});

  ToyNet student;
  student.layers.push_back({"layer0", apply_mask(w, build_mask(score_magnitude(w), sparsity)),
                            std::monostate{}, Activation::identity});

  Matrix y_train = net_forward(teacher, x_train);
  Matrix y_eval = net_forward(teacher, x_eval);
  return {std::move(teacher), std::move(student), {std::move(x_train), std::move(y_train)},
          {std::move(x_eval), std::move(y_eval)}};
}

}  // namespace sppft
