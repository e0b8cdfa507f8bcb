// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "sppft/adapters.hpp"
#include "sppft/checkpoint.hpp"
#include "sppft/diagnostics.hpp"
#include "sppft/param_count.hpp"
#include "sppft/training.hpp"
#include "test_util.hpp"

using namespace sppft;
using sppft::testing::divisors;
using sppft::testing::numeric_gradient;
using sppft::testing::random_pruned;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

Outcome table1_counts() {
  const auto c7 = count_trainable(llama7b(), 16);
  const auto c13 = count_trainable(llama13b(), 16);
  const double declared_total = 6.8e9;
  const bool ok7 = c7.trainable == 19'578'880 && std::abs(c7.per_mille - 2.90) <= 0.01 &&
                   std::abs(static_cast<double>(c7.total) / declared_total - 1.0) <= 0.01;
  const bool ok13 = std::abs(static_cast<double>(c13.trainable) - 3.1e7) <= 0.05e7 &&
                    std::abs(c13.per_mille - 2.35) <= 0.01;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "7B trainable=%llu total=%llu per_mille=%.4f; 13B trainable=%llu per_mille=%.4f",
                static_cast<unsigned long long>(c7.trainable),
                static_cast<unsigned long long>(c7.total), c7.per_mille,
                static_cast<unsigned long long>(c13.trainable), c13.per_mille);
  return {ok7 && ok13, buf};
}

Outcome sparsity_preservation() {
  Rng rng(2024);
  const SparsityPattern patterns[] = {
      SparsityPattern::unstructured(0.5), SparsityPattern::unstructured(0.75),
      SparsityPattern::n_of_m(2, 4), SparsityPattern::n_of_m(2, 8)};
  const int cases = 1200;
  for (int trial = 0; trial < cases; ++trial) {
    const auto& pattern = patterns[trial % 4];
    const std::size_t m = 1 + rng.below(64);
    const std::size_t n = 8 * (1 + rng.below(8));
    const auto layer = random_pruned(rng, m, n, pattern);
    const auto rs = divisors(m);
    const std::size_t r = rs[rng.below(rs.size())];
    const auto ad = make_spp_adapter(rng_uniform(rng, -3, 3, r, n), rng_uniform(rng, -3, 3, m, 1),
                                     rng.uniform(-2, 2), 0.0);
    const Matrix eff = spp_effective_weight(layer, ad);
    const auto merged = spp_merge(layer, ad);
    for (std::size_t i = 0; i < m * n; ++i) {
      if (layer.mask.mask.data()[i] == 0.0 &&
          (eff.data()[i] != 0.0 || merged.weight.data()[i] != 0.0)) {
        return {false, "case " + std::to_string(trial) + ": nonzero at masked entry " + std::to_string(i)};
      }
    }
    if (count_nonzero(merged.weight) != count_nonzero(layer.weight) || !verify_mask(merged).pass) {
      return {false, "case " + std::to_string(trial) + ": nnz changed or verify failed"};
    }
  }
  return {true, std::to_string(cases) + " cases, no masked nonzero, nnz preserved"};
}

Outcome block_split_equivalence() {
  Rng rng(7);
  double worst = 0.0;
  std::size_t combos = 0;
  for (std::size_t b : {1u, 2u, 7u}) {
    for (std::size_t m : {4u, 8u, 16u}) {
      for (std::size_t n : {4u, 12u}) {
        const auto layer = random_pruned(rng, m, n, SparsityPattern::n_of_m(2, 4));
        for (std::size_t r : divisors(m)) {
          const auto ad = spp_init(m, n, r, 0.7, 0.25, rng, SppInit::none_zero);
          const Matrix x = rng_uniform(rng, -1, 1, b, n);
          const auto drop = dropout_apply(x, ad.p, rng, Mode::train).mask;
          const auto naive = spp_forward_naive(x, layer, ad, drop, Mode::train);
          AllocationProbe probe;
          const auto fast = spp_forward_optimized(x, layer, ad, drop, Mode::eval);
          if (probe.count_shape(m, n) != 0) {
            return {false, "layer-sized buffer allocated at m=" + std::to_string(m) +
                               " n=" + std::to_string(n) + " r=" + std::to_string(r)};
          }
          // eval mode skips dropout; compare the train-mode result with the same mask
          const auto fast_train = spp_forward_optimized(x, layer, ad, drop, Mode::train);
          worst = std::max(worst, relative_max_error(fast_train.y, naive.y));
          (void)fast;
          ++combos;
        }
      }
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu combinations, worst relative error %.3g, no m x n buffer",
                combos, worst);
  return {worst <= 1e-12, buf};
}

double half_squared(const Matrix& y, const Matrix& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y.data()[i] - target.data()[i];
    acc += 0.5 * d * d;
  }
  return acc;
}

Outcome gradient_check() {
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2, m = 4, n = 3, r = trial % 2 == 0 ? 2 : 4;
    const auto layer = random_pruned(rng, m, n, SparsityPattern::unstructured(0.5));
    SppAdapter ad = spp_init(m, n, r, 1.1, 0.2, rng, SppInit::none_zero);
    Matrix x = rng_uniform(rng, -1, 1, b, n);
    const Matrix target = rng_uniform(rng, -1, 1, b, m);
    const auto drop = dropout_apply(x, ad.p, rng, Mode::train).mask;
    const auto fwd = spp_forward_optimized(x, layer, ad, drop, Mode::train);
    const auto g = spp_backward(fwd.cache, subtract(fwd.y, target));
    auto loss = [&] { return half_squared(spp_forward_naive(x, layer, ad, drop, Mode::train).y, target); };
    worst = std::max({worst, relative_max_error(g.d_alpha, numeric_gradient(ad.w_alpha, loss)),
                      relative_max_error(g.d_beta, numeric_gradient(ad.w_beta, loss)),
                      relative_max_error(g.d_x, numeric_gradient(x, loss))});
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2, m = 4, n = 4, r = 1 + trial % 3;
    const auto layer = random_pruned(rng, m, n, SparsityPattern::n_of_m(2, 4));
    LoraAdapter ad = make_lora_adapter(rng_uniform(rng, -1, 1, r, n), rng_uniform(rng, -1, 1, m, r), 0.9, 0.2);
    const Matrix x = rng_uniform(rng, -1, 1, b, n);
    const Matrix target = rng_uniform(rng, -1, 1, b, m);
    const auto drop = dropout_apply(x, ad.p, rng, Mode::train).mask;
    const auto fwd = lora_forward(x, layer, ad, drop, Mode::train);
    const auto g = lora_backward(fwd.cache, subtract(fwd.y, target));
    auto loss = [&] { return half_squared(lora_forward(x, layer, ad, drop, Mode::train).y, target); };
    worst = std::max({worst, relative_max_error(g.d_a, numeric_gradient(ad.a, loss)),
                      relative_max_error(g.d_b, numeric_gradient(ad.b, loss))});
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "50 SPP + 50 LoRA instances, worst relative error %.3g", worst);
  return {worst <= 1e-6, buf};
}

Outcome init_transparency() {
  Rng rng(5);
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 16, n = 8;
    const auto layer = random_pruned(rng, m, n, SparsityPattern::n_of_m(2, 4));
    const auto ad = spp_init(m, n, 1u << (trial % 5), 1.0, 0.05, rng);
    const Matrix x = rng_uniform(rng, -1, 1, 3, n);
    const Matrix base = matmul(x, layer.weight);
    exact = exact && spp_forward_naive(x, layer, ad, rng, Mode::train).y == base &&
            spp_forward_optimized(x, layer, ad, rng, Mode::train).y == base;
  }
  std::vector<std::string> warnings;
  auto previous = set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  const auto dead = spp_init(8, 8, 2, 1.0, 0.0, rng, SppInit::both_zero);
  set_warning_sink(previous);
  const auto layer = random_pruned(rng, 8, 8, SparsityPattern::n_of_m(2, 4));
  const auto fwd = spp_forward_naive(rng_uniform(rng, -1, 1, 4, 8), layer, dead, rng, Mode::train);
  const auto g = spp_backward(fwd.cache, rng_uniform(rng, -1, 1, 4, 8));
  const bool vanished = count_nonzero(g.d_alpha) == 0;
  return {exact && vanished && warnings.size() == 1,
          std::string(exact ? "init forward == base forward on 100 draws" : "init forward differs") +
              "; both-zero d_alpha " + (vanished ? "zero" : "nonzero") + ", warnings=" +
              std::to_string(warnings.size())};
}

ToyNet with_adapters(ToyNet net, bool lora, std::size_t r, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& layer : net.layers) {
    const auto m = layer.base.weight.rows(), n = layer.base.weight.cols();
    if (lora) layer.adapter = lora_init(m, n, r, 1.0, 0.05, rng);
    else layer.adapter = spp_init(m, n, r, 1.0, 0.05, rng);
  }
  return net;
}

Outcome recovery() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ts = make_teacher_student(seed, 64, 64, SparsityPattern::n_of_m(2, 4), 2048);
    const double pruned = evaluate(ts.student, ts.eval);
    TrainConfig cfg;
    cfg.seed = seed;
    const auto spp = train(with_adapters(ts.student, false, 16, seed), ts.train, cfg, &ts.eval);
    const ToyNet merged = merge_adapters(spp.net);
    bool verified = true;
    for (const auto& l : merged.layers) verified = verified && verify_mask(l.base).pass;
    const auto lora = train(with_adapters(ts.student, true, 8, seed), ts.train, cfg, &ts.eval);
    const double lora_star = evaluate(merge_adapters(lora.net, true), ts.eval);
    ok = ok && *spp.record.eval_loss < pruned && verified;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%sseed %llu: pruned %.4g spp %.4g lora* %.4g%s",
                  seed == 0 ? "" : "; ", static_cast<unsigned long long>(seed), pruned,
                  *spp.record.eval_loss, lora_star, verified ? "" : " (verify FAILED)");
    detail += buf;
  }
  return {ok, detail};
}

Outcome densification() {
  Rng rng(31);
  int densified = 0, preserved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // 12x12: SPP r=3 and LoRA rank 2 both train 48 values
    const auto layer = random_pruned(rng, 12, 12, SparsityPattern::n_of_m(2, 4));
    const std::size_t nnz = count_nonzero(layer.weight);
    const auto lora = make_lora_adapter(rng_uniform(rng, -1, 1, 2, 12), rng_uniform(rng, -1, 1, 12, 2), 1.0, 0.0);
    const auto spp = make_spp_adapter(rng_uniform(rng, -1, 1, 3, 12), rng_uniform(rng, -1, 1, 12, 1), 1.0, 0.0);
    densified += count_nonzero(lora_merge_dense(layer, lora)) > nnz;
    preserved += count_nonzero(spp_merge(layer, spp).weight) == nnz;
  }
  return {densified == 100 && preserved == 100,
          "lora densified " + std::to_string(densified) + "/100, spp preserved " +
              std::to_string(preserved) + "/100"};
}

Outcome reproducibility() {
  const std::uint64_t golden[16] = {
      0x15780b2e0c2ec716ULL, 0x6104d9866d113a7eULL, 0xae17533239e499a1ULL, 0xecb8ad4703b360a1ULL,
      0xfde6dc7fe2ec5e64ULL, 0xc50da53101795238ULL, 0xb82154855a65ddb2ULL, 0xd99a2743ebe60087ULL,
      0xc2e96e726e97647eULL, 0x9556615f775fbc3dULL, 0xaeb53b340c103971ULL, 0x4a69db9873af8965ULL,
      0xcd0feda93006c6b6ULL, 0x52480865a4b42742ULL, 0xb60dec3bf2d887cdULL, 0xe0b55a68b96677faULL,
  };
  Rng rng(42);
  bool golden_ok = true;
  for (auto g : golden) golden_ok = golden_ok && rng.next_u64() == g;

  auto run_once = [] {
    const auto ts = make_teacher_student(3, 32, 32, SparsityPattern::n_of_m(2, 4), 512);
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.seed = 11;
    auto result = train(with_adapters(ts.student, false, 8, 11), ts.train, cfg, &ts.eval);
    TensorStore store;
    store_net(store, result.net);
    Json meta;
    set_meta_pattern(meta, SparsityPattern::n_of_m(2, 4));
    meta["adapter"] = {{"kind", "spp"}, {"r", 8}, {"s", 1.0}, {"p", 0.05}};
    write_meta(store, meta);
    return std::make_pair(store.serialize(), result.record);
  };
  const auto a = run_once();
  const auto b = run_once();
  const bool same = a.first == b.first && a.second == b.second && a.second.to_csv() == b.second.to_csv();
  return {golden_ok && same, std::string("seed-42 golden ") + (golden_ok ? "matches" : "DIFFERS") +
                                 "; checkpoints/RunRecords " + (same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> check;
    double budget_seconds;
  };
  const std::vector<Criterion> criteria = {
      {"parameter counts (7B/13B, r=16)", table1_counts, 1},
      {"sparsity preservation", sparsity_preservation, 10},
      {"block-split forward equivalence", block_split_equivalence, 5},
      {"gradient correctness", gradient_check, 10},
      {"init transparency and degenerate-init warning", init_transparency, 5},
      {"recovery on teacher-student task", recovery, 60},
      {"densification contrast", densification, 10},
      {"bit-reproducibility", reproducibility, 10},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome{false, ""};
    try {
      outcome = criteria[i].check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= criteria[i].budget_seconds;
    const bool pass = outcome.pass && in_time;
    failures += !pass;
    std::printf("[%s] %zu. %s (%.2fs%s): %s\n", pass ? "PASS" : "FAIL", i + 1, criteria[i].name, secs,
                in_time ? "" : ", over budget", outcome.detail.c_str());
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
