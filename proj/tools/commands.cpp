// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sppft/checkpoint.hpp"
#include "sppft/errors.hpp"
#include "sppft/param_count.hpp"
#include "sppft/pruning.hpp"
#include "sppft/tensor_store.hpp"
#include "sppft/training.hpp"

namespace sppft::cli {

namespace {

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// Loads a store, mapping failures to the "failed" exit code.
std::optional<TensorStore> load(const std::string& path, std::ostream& err) {
  try {
    return store_read(path);
  } catch (const Error& e) {
    err << "error: " << path << ": " << e.what() << '\n';
    return std::nullopt;
  }
}

std::optional<ToyNet> load_net(const TensorStore& store, const std::string& path, std::ostream& err) {
  try {
    return net_from_store(store);
  } catch (const std::exception& e) {
    err << "error: " << path << ": " << e.what() << '\n';
    return std::nullopt;
  }
}

std::string report_line(const std::string& name, const PrunedLayer& layer, const MaskReport& r) {
  std::string line = name + ": " + shape(layer.weight) + " pattern=" +
                     layer.mask.pattern.label() + " nnz=" + std::to_string(r.nnz) +
                     " zeros=" + std::to_string(r.mask_zeros) + " ratio=" + fixed4(r.ratio) +
                     (r.pass ? " PASS" : " FAIL");
  if (!r.detail.empty()) line += " (" + r.detail + ")";
  return line;
}

Dataset read_dataset(const TensorStore& store, const char* x_name, const char* y_name) {
  return {tensor_to_matrix(store.at(x_name)), tensor_to_matrix(store.at(y_name))};
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_prune(const PruneOptions& opt, std::ostream& out, std::ostream& err) {
  std::optional<SparsityPattern> pattern;
  try {
    pattern = SparsityPattern::parse(opt.pattern, opt.ratio, opt.row_wise);
  } catch (const Error& e) {
    err << "usage error: --pattern: " << e.what() << '\n';
    return kUsage;
  }
  if (opt.metric != "magnitude" && opt.metric != "wanda") {
    err << "usage error: --metric must be 'magnitude' or 'wanda'\n";
    return kUsage;
  }
  if (opt.metric == "wanda" && opt.calib.empty()) {
    err << "usage error: --metric wanda requires --calib\n";
    return kUsage;
  }
  if (opt.row_wise && pattern->is_n_of_m()) {
    err << "usage error: --row-wise applies to unstructured patterns only\n";
    return kUsage;
  }

  auto store = load(opt.input, err);
  if (!store) return kFailed;
  std::optional<TensorStore> calib;
  if (!opt.calib.empty()) {
    calib = load(opt.calib, err);
    if (!calib) return kFailed;
  }

  const auto names = layer_names(*store);
  if (names.empty()) {
    err << "error: " << opt.input << ": no '<layer>.weight' tensors\n";
    return kFailed;
  }
  TensorStore result = *store;
  std::vector<std::string> lines;
  try {
    for (const auto& name : names) {
      const Matrix w = tensor_to_matrix(store->at(name + ".weight"));
      Matrix scores = score_magnitude(w);
      if (calib) {
        const Tensor* acts = calib->find(name + ".calib");
        if (acts == nullptr) acts = calib->find("calib");
        if (acts == nullptr) {
          err << "usage error: calibration store has neither '" << name << ".calib' nor 'calib'\n";
          return kUsage;
        }
        scores = score_wanda(w, collect_calibration(tensor_to_matrix(*acts)));
      }
      const PrunedLayer pruned = apply_mask(w, build_mask(scores, *pattern));
      const auto* original = store->find(name + ".weight");
      result.put(tensor_from_matrix(name + ".weight", pruned.weight, original->dtype));
      result.put(tensor_from_matrix(name + ".mask", pruned.mask.mask, DType::u8));
      lines.push_back(report_line(name, pruned, verify_mask(pruned)));
    }
  } catch (const PatternError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  Json meta = read_meta(result);
  set_meta_pattern(meta, *pattern);
  meta["metric"] = opt.metric;
  write_meta(result, meta);
  store_write(result, opt.output);
  for (const auto& l : lines) out << l << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_attach(const AttachOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.kind != "spp" && opt.kind != "lora") {
    err << "usage error: --kind must be 'spp' or 'lora'\n";
    return kUsage;
  }
  if (opt.r == 0) {
    err << "usage error: --r must be positive\n";
    return kUsage;
  }
  if (!(opt.dropout >= 0.0 && opt.dropout < 1.0)) {
    err << "usage error: --dropout must lie in [0, 1)\n";
    return kUsage;
  }
  auto store = load(opt.input, err);
  if (!store) return kFailed;
  auto net = load_net(*store, opt.input, err);
  if (!net) return kFailed;
  if (net->has_adapters()) {
    err << "usage error: " << opt.input << " already carries adapters\n";
    return kUsage;
  }

  if (opt.kind == "spp") {
    std::string offending;
    for (const auto& layer : net->layers) {
      if (layer.base.out_features() % opt.r != 0) {
        offending += " " + layer.name + "(m=" + std::to_string(layer.base.out_features()) + ")";
      }
    }
    if (!offending.empty()) {
      err << "usage error: --r " << opt.r << " does not divide the output rows of:" << offending << '\n';
      return kUsage;
    }
  }

  Rng rng(opt.seed);
  ArchSpec arch{"store", {}, 1, 0};
  std::uint64_t lora_trainable = 0;
  std::uint64_t total = 0;
  for (auto& layer : net->layers) {
    const std::size_t m = layer.base.out_features();
    const std::size_t n = layer.base.in_features();
    arch.block_shapes.push_back({m, n});
    total += static_cast<std::uint64_t>(m) * n;
    if (opt.kind == "spp") {
      layer.adapter = spp_init(m, n, opt.r, opt.scale, opt.dropout, rng);
      if (opt.r == m) out << layer.name << ": full-parameter mode (r == m)\n";
    } else {
      layer.adapter = lora_init(m, n, opt.r, opt.scale, opt.dropout, rng);
      lora_trainable += static_cast<std::uint64_t>(opt.r) * (m + n);
    }
  }

  TensorStore result = *store;
  store_net(result, *net);
  Json meta = read_meta(result);
  meta["adapter"] = Json{{"kind", opt.kind}, {"r", opt.r}, {"s", opt.scale}, {"p", opt.dropout}};
  write_meta(result, meta);
  store_write(result, opt.output);

  ParamCount count;
  if (opt.kind == "spp") {
    count = count_trainable(arch, opt.r);
  } else {
    count = {lora_trainable, total, 1000.0 * static_cast<double>(lora_trainable) / static_cast<double>(total)};
  }
  out << "trainable=" << count.trainable << " total=" << count.total
      << " per_mille=" << fixed4(count.per_mille) << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  if (opt.optimizer == "adamw") {
    cfg.optimizer = Optimizer::adamw;
  } else if (opt.optimizer == "sgd") {
    cfg.optimizer = Optimizer::sgd;
  } else {
    err << "usage error: --optimizer must be 'adamw' or 'sgd'\n";
    return kUsage;
  }
  cfg.lr = opt.lr.value_or(cfg.optimizer == Optimizer::adamw ? 1e-3 : 1e-2);
  cfg.steps = opt.steps;
  cfg.batch_size = opt.batch_size;
  cfg.warmup_ratio = opt.warmup_ratio;
  cfg.weight_decay = opt.weight_decay;
  cfg.seed = opt.seed;
  cfg.target = opt.baseline_eq3 ? TrainTarget::fixed_mask : TrainTarget::adapters;
  cfg.optimized_forward = !opt.naive_forward;
  try {
    cfg.validate();
  } catch (const Error& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  auto model_store = load(opt.model, err);
  if (!model_store) return kFailed;
  auto data_store = load(opt.data, err);
  if (!data_store) return kFailed;
  auto net = load_net(*model_store, opt.model, err);
  if (!net) return kFailed;
  if (opt.baseline_eq3 && net->has_adapters()) {
    err << "usage error: --baseline-eq3 retrains base weights and needs a model without adapters\n";
    return kUsage;
  }
  if (!opt.baseline_eq3 && !net->has_adapters()) {
    err << "usage error: model has no adapters (run attach, or pass --baseline-eq3)\n";
    return kUsage;
  }

  Dataset train_data;
  std::optional<Dataset> eval_data;
  try {
    train_data = read_dataset(*data_store, "x", "y");
    if (data_store->contains("x_eval")) eval_data = read_dataset(*data_store, "x_eval", "y_eval");
  } catch (const Error& e) {
    err << "error: " << opt.data << ": " << e.what() << '\n';
    return kFailed;
  }

  TrainResult result;
  try {
    result = train(*net, train_data, cfg, eval_data ? &*eval_data : nullptr);
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "; last good step " << e.last_good_step() << '\n';
    return kFailed;
  } catch (const ShapeError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  if (cfg.target == TrainTarget::adapters) {
    for (std::size_t i = 0; i < net->layers.size(); ++i) {
      if (!(result.net.layers[i].base.weight == net->layers[i].base.weight)) {
        err << "internal error: frozen weights of " << net->layers[i].name << " changed\n";
        return kInternal;
      }
    }
  } else {
    for (const auto& layer : result.net.layers) {
      const auto report = verify_mask(layer.base);
      if (report.violations != 0) {
        err << "internal error: fixed-mask retraining broke the mask of " << layer.name << '\n';
        return kInternal;
      }
    }
  }

  TensorStore out_store = *model_store;
  store_net(out_store, result.net);
  store_write(out_store, opt.output);
  const std::string csv_path = opt.csv.empty() ? opt.output + ".csv" : opt.csv;
  write_file_atomic(csv_path, result.record.to_csv());
  const std::string summary = result.record.summary_json();
  if (!opt.summary.empty()) write_file_atomic(opt.summary, summary + "\n");
  out << summary << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_merge(const MergeOptions& opt, std::ostream& out, std::ostream& err) {
  auto store = load(opt.input, err);
  if (!store) return kFailed;
  auto net = load_net(*store, opt.input, err);
  if (!net) return kFailed;
  if (!net->has_adapters()) {
    err << "usage error: " << opt.input << " has no adapters to merge\n";
    return kUsage;
  }
  Json meta = read_meta(*store);
  const std::string kind = meta["adapter"].value("kind", std::string());
  if (opt.reprune_with_original_mask && kind != "lora") {
    err << "usage error: --reprune-with-original-mask applies to LoRA models only\n";
    return kUsage;
  }

  const ToyNet merged = merge_adapters(*net, opt.reprune_with_original_mask);
  bool densified = false;
  std::vector<std::string> lines;
  for (const auto& layer : merged.layers) {
    const auto report = verify_mask(layer.base);
    lines.push_back(report_line(layer.name, layer.base, report));
    if (report.pass) continue;
    if (kind == "lora" && !opt.reprune_with_original_mask) {
      densified = true;
      continue;
    }
    err << "internal error: merged layer " << layer.name << " violates its mask: " << report.detail << '\n';
    return kInternal;
  }

  TensorStore result = *store;
  store_net(result, merged);
  meta.erase("adapter");
  meta["merged"] = opt.reprune_with_original_mask ? "lora*" : kind;
  if (densified) meta["densified"] = true;
  write_meta(result, meta);
  store_write(result, opt.output);
  for (const auto& l : lines) out << l << '\n';
  if (densified) {
    err << "warning: LoRA merge densified the sparse weights; rerun with "
           "--reprune-with-original-mask to restore the pattern\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_verify(const std::string& input, std::ostream& out, std::ostream& err) {
  auto store = load(input, err);
  if (!store) return kFailed;
  auto net = load_net(*store, input, err);
  if (!net) return kFailed;
  bool all_pass = true;
  for (const auto& layer : net->layers) {
    const auto report = verify_mask(layer.base);
    all_pass = all_pass && report.pass;
    out << report_line(layer.name, layer.base, report) << '\n';
  }
  return all_pass ? kOk : kFailed;
}

// ---------------------------------------------------------------------------

int cmd_count_params(const CountOptions& opt, std::ostream& out, std::ostream& err) {
  std::optional<ArchSpec> arch = arch_preset(opt.arch);
  if (!arch) {
    std::ifstream file(opt.arch);
    if (!file) {
      err << "usage error: unknown arch '" << opt.arch << "' (use llama7b, llama13b or a JSON file)\n";
      return kUsage;
    }
    std::stringstream text;
    text << file.rdbuf();
    try {
      arch = arch_from_json(text.str());
    } catch (const Error& e) {
      err << "usage error: " << opt.arch << ": " << e.what() << '\n';
      return kUsage;
    }
  }
  try {
    const auto count = count_trainable(*arch, opt.r);
    out << "arch=" << arch->name << " r=" << opt.r << '\n'
        << "trainable=" << count.trainable << '\n'
        << "total=" << count.total << '\n'
        << "per_mille=" << fixed4(count.per_mille) << '\n';
  } catch (const Error& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

int cmd_make_demo(const DemoOptions& opt, std::ostream& out, std::ostream& err) {
  if (opt.m == 0 || opt.n == 0 || opt.samples == 0) {
    err << "usage error: --m, --n and --samples must be positive\n";
    return kUsage;
  }
  const auto ts = make_teacher_student(opt.seed, opt.m, opt.n, SparsityPattern::unstructured(0.0), opt.samples);
  TensorStore model;
  model.add(tensor_from_matrix("layer0.weight", ts.teacher.layers[0].base.weight));
  Json meta{{"activations", {"identity"}}, {"loss", "mse"}};
  write_meta(model, meta);

  TensorStore data;
  data.add(tensor_from_matrix("x", ts.train.x));
  data.add(tensor_from_matrix("y", ts.train.y));
  data.add(tensor_from_matrix("x_eval", ts.eval.x));
  data.add(tensor_from_matrix("y_eval", ts.eval.y));
  data.add(tensor_from_matrix("calib", ts.train.x));

  store_write(model, opt.model);
  store_write(data, opt.data);
  out << "wrote " << opt.model << " (" << opt.m << "x" << opt.n << " teacher) and " << opt.data
      << " (" << opt.samples << " train / " << ts.eval.size() << " eval samples)\n";
  return kOk;
}

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err) {
  auto model_store = load(opt.model, err);
  if (!model_store) return kFailed;
  auto data_store = load(opt.data, err);
  if (!data_store) return kFailed;
  auto net = load_net(*model_store, opt.model, err);
  if (!net) return kFailed;
  try {
    const Dataset train_data = read_dataset(*data_store, "x", "y");
    Json j;
    j["train_loss"] = evaluate(*net, train_data);
    if (data_store->contains("x_eval")) {
      j["eval_loss"] = evaluate(*net, read_dataset(*data_store, "x_eval", "y_eval"));
    }
    out << j.dump(2) << '\n';
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kOk;
}

}  // namespace sppft::cli
