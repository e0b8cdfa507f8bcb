// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sppft {

struct LayerShape {
  std::size_t m;  // output features
  std::size_t n;  // input features
};

/// Adapted linear shapes of one repeated block, the block count, and any
/// parameters outside those layers (embeddings, norms, output head).
struct ArchSpec {
  std::string name;
  std::vector<LayerShape> block_shapes;
  std::size_t blocks = 1;
  std::uint64_t extra_params = 0;
};

struct ParamCount {
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  double per_mille = 0.0;
};

/// Each adapted m x n layer contributes m + r*n trainable parameters.
/// Throws PatternError when r does not divide some m.
ParamCount count_trainable(const ArchSpec& arch, std::size_t r);

/// LLaMA-7B: 32 blocks of q/k/v/o 4096x4096, gate/up 11008x4096,
/// down 4096x11008; 32000-token embedding and head, RMSNorm weights.
ArchSpec llama7b();
/// LLaMA-13B: 40 blocks, hidden 5120, MLP 13824.
ArchSpec llama13b();

std::optional<ArchSpec> arch_preset(std::string_view name);

/// Parses {"blocks": B, "shapes": [[m, n], ...], "extra_params": E}.
ArchSpec arch_from_json(std::string_view text);

}  // namespace sppft
