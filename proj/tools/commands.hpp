// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace sppft::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kFailed = 1,     // verification failure, unreadable store, diverged run
  kUsage = 2,      // bad flags or flags that do not fit the model
  kInternal = 3,   // an invariant the library guarantees was broken
};

struct PruneOptions {
  std::string input;
  std::string output;
  std::string pattern = "2:4";
  double ratio = 0.5;
  std::string metric = "magnitude";
  std::string calib;
  bool row_wise = false;
};

struct AttachOptions {
  std::string input;
  std::string output;
  std::size_t r = 16;
  double scale = 1.0;
  double dropout = 0.05;
  std::string kind = "spp";
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string model;
  std::string data;
  std::string output;
  std::string csv;  // defaults to <output>.csv
  std::string summary;
  std::size_t steps = 500;
  std::optional<double> lr;  // 1e-3 for adamw, 1e-2 for sgd
  std::string optimizer = "adamw";
  double warmup_ratio = 0.03;
  double weight_decay = 0.001;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool baseline_eq3 = false;
  bool naive_forward = false;
};

struct MergeOptions {
  std::string input;
  std::string output;
  bool reprune_with_original_mask = false;
};

struct CountOptions {
  std::string arch;
  std::size_t r = 16;
};

struct DemoOptions {
  std::string model;
  std::string data;
  std::uint64_t seed = 0;
  std::size_t m = 64;
  std::size_t n = 64;
  std::size_t samples = 2048;
};

struct EvalOptions {
  std::string model;
  std::string data;
};

int cmd_prune(const PruneOptions& opt, std::ostream& out, std::ostream& err);
int cmd_attach(const AttachOptions& opt, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err);
int cmd_merge(const MergeOptions& opt, std::ostream& out, std::ostream& err);
int cmd_verify(const std::string& input, std::ostream& out, std::ostream& err);
int cmd_count_params(const CountOptions& opt, std::ostream& out, std::ostream& err);
int cmd_make_demo(const DemoOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace sppft::cli
