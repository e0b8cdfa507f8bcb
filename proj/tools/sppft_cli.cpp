// SPDX-License-Identifier: Apache-2.0
// Command-line front end: prune -> attach -> train -> merge -> verify.
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

std::uint64_t seed_fallback() {
  if (const char* env = std::getenv("SPP_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      std::cerr << "warning: ignoring unparsable SPP_SEED='" << env << "'\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace sppft::cli;

  CLI::App app{"Sparsity-preserving fine-tuning of pruned linear layers"};
  app.require_subcommand(1);

  const std::uint64_t default_seed = seed_fallback();

  PruneOptions prune;
  auto* p = app.add_subcommand("prune", "Prune every layer of a weight store");
  p->add_option("input", prune.input, "Dense weight store")->required()->check(CLI::ExistingFile);
  p->add_option("output", prune.output, "Pruned store to write")->required();
  p->add_option("--pattern", prune.pattern, "N:M (e.g. 2:4) or 'unstructured'")->capture_default_str();
  p->add_option("--ratio", prune.ratio, "Zero fraction for unstructured pruning")->capture_default_str();
  p->add_option("--metric", prune.metric, "magnitude or wanda")->capture_default_str();
  p->add_option("--calib", prune.calib, "Calibration activations for wanda")->check(CLI::ExistingFile);
  p->add_flag("--row-wise", prune.row_wise, "Rank unstructured scores within each row");

  AttachOptions attach;
  attach.seed = default_seed;
  auto* a = app.add_subcommand("attach", "Attach zero-initialized adapters to a pruned store");
  a->add_option("input", attach.input, "Pruned store")->required()->check(CLI::ExistingFile);
  a->add_option("output", attach.output, "Store with adapters")->required();
  a->add_option("--r", attach.r, "Adapter rank")->capture_default_str();
  a->add_option("--scale", attach.scale, "Adapter branch scale s")->capture_default_str();
  a->add_option("--dropout", attach.dropout, "Adapter input dropout")->capture_default_str();
  a->add_option("--kind", attach.kind, "spp or lora")->capture_default_str();
  a->add_option("--seed", attach.seed, "Initialization seed (falls back to SPP_SEED)");

  TrainOptions train;
  train.seed = default_seed;
  auto* t = app.add_subcommand("train", "Fine-tune adapters (or masked weights) on a dataset");
  t->add_option("model", train.model, "Model store")->required()->check(CLI::ExistingFile);
  t->add_option("data", train.data, "Dataset store with x, y [, x_eval, y_eval]")->required()->check(CLI::ExistingFile);
  t->add_option("output", train.output, "Trained store to write")->required();
  t->add_option("--csv", train.csv, "Per-step record (default <output>.csv)");
  t->add_option("--summary", train.summary, "Also write the JSON summary here");
  t->add_option("--steps", train.steps, "Optimizer steps")->capture_default_str();
  t->add_option("--lr", train.lr, "Peak learning rate (default 1e-3 adamw, 1e-2 sgd)");
  t->add_option("--optimizer", train.optimizer, "adamw or sgd")->capture_default_str();
  t->add_option("--warmup-ratio", train.warmup_ratio, "Warmup fraction of steps")->capture_default_str();
  t->add_option("--weight-decay", train.weight_decay, "Decoupled weight decay (adamw)")->capture_default_str();
  t->add_option("--batch-size", train.batch_size, "Minibatch size")->capture_default_str();
  t->add_option("--seed", train.seed, "Data order and dropout seed (falls back to SPP_SEED)");
  t->add_flag("--baseline-eq3", train.baseline_eq3, "Retrain masked base weights instead of adapters");
  t->add_flag("--naive-forward", train.naive_forward, "Materialize the effective weight in the SPP forward");

  MergeOptions merge;
  auto* m = app.add_subcommand("merge", "Fold adapters into the weights");
  m->add_option("input", merge.input, "Store with adapters")->required()->check(CLI::ExistingFile);
  m->add_option("output", merge.output, "Merged store")->required();
  m->add_flag("--reprune-with-original-mask", merge.reprune_with_original_mask,
              "LoRA only: reapply the pruning mask after merging");

  std::string verify_input;
  auto* v = app.add_subcommand("verify", "Check every layer against its sparsity mask");
  v->add_option("input", verify_input, "Store to verify")->required();

  CountOptions count;
  auto* c = app.add_subcommand("count-params", "Trainable-parameter count for an architecture");
  c->add_option("--arch", count.arch, "llama7b, llama13b or a JSON shape file")->required();
  c->add_option("--r", count.r, "Adapter rank")->capture_default_str();

  DemoOptions demo;
  demo.seed = default_seed;
  auto* d = app.add_subcommand("make-demo", "Write a teacher weight store and its dataset");
  d->add_option("model", demo.model, "Teacher weight store")->required();
  d->add_option("data", demo.data, "Dataset store")->required();
  d->add_option("--seed", demo.seed, "Seed (falls back to SPP_SEED)");
  d->add_option("--m", demo.m, "Output features")->capture_default_str();
  d->add_option("--n", demo.n, "Input features")->capture_default_str();
  d->add_option("--samples", demo.samples, "Training samples")->capture_default_str();

  EvalOptions eval;
  auto* e = app.add_subcommand("eval", "Report losses of a model on a dataset");
  e->add_option("model", eval.model, "Model store")->required()->check(CLI::ExistingFile);
  e->add_option("data", eval.data, "Dataset store")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (p->parsed()) return cmd_prune(prune, std::cout, std::cerr);
    if (a->parsed()) return cmd_attach(attach, std::cout, std::cerr);
    if (t->parsed()) return cmd_train(train, std::cout, std::cerr);
    if (m->parsed()) return cmd_merge(merge, std::cout, std::cerr);
    if (v->parsed()) return cmd_verify(verify_input, std::cout, std::cerr);
    if (c->parsed()) return cmd_count_params(count, std::cout, std::cerr);
    if (d->parsed()) return cmd_make_demo(demo, std::cout, std::cerr);
    if (e->parsed()) return cmd_eval(eval, std::cout, std::cerr);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kFailed;
  }
  return kUsage;
}
