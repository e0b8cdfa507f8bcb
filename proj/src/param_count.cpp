// SPDX-License-Identifier: Apache-2.0
#include "sppft/param_count.hpp"

#include "json.hpp"
#include "sppft/errors.hpp"

namespace sppft {

namespace {

constexpr std::uint64_t kLlamaVocab = 32000;

ArchSpec llama_like(std::string name, std::size_t hidden, std::size_t mlp, std::size_t blocks) {
  ArchSpec arch;
  arch.name = std::move(name);
  arch.blocks = blocks;
  arch.block_shapes = {
      {hidden, hidden}, {hidden, hidden}, {hidden, hidden}, {hidden, hidden},  // q k v o
      {mlp, hidden},    {mlp, hidden},                                         // gate up
      {hidden, mlp},                                                           // down
  };
  // token embedding + output head, two RMSNorm vectors per block + final norm
  arch.extra_params = 2 * kLlamaVocab * hidden + (2 * blocks + 1) * hidden;
  return arch;
}

}  // namespace

ParamCount count_trainable(const ArchSpec& arch, std::size_t r) {
  if (r == 0) throw ArgumentError("rank must be positive");
  if (arch.blocks == 0 || arch.block_shapes.empty()) {
    throw ArgumentError("architecture '" + arch.name + "' has no layers");
  }
  std::uint64_t trainable = 0;
  std::uint64_t linear = 0;
  for (const auto& shape : arch.block_shapes) {
    if (shape.m == 0 || shape.n == 0) throw ShapeError("layer shapes must be positive");
    if (shape.m % r != 0) {
      throw PatternError("rank " + std::to_string(r) + " does not divide layer rows " +
                         std::to_string(shape.m));
    }
    trainable += shape.m + static_cast<std::uint64_t>(r) * shape.n;
    linear += static_cast<std::uint64_t>(shape.m) * shape.n;
  }
  ParamCount count;
  count.trainable = trainable * arch.blocks;
  count.total = linear * arch.blocks + arch.extra_params;
  count.per_mille = 1000.0 * static_cast<double>(count.trainable) / static_cast<double>(count.total);
  return count;
}

ArchSpec llama7b() { return llama_like("llama7b", 4096, 11008, 32); }

ArchSpec llama13b() { return llama_like("llama13b", 5120, 13824, 40); }

std::optional<ArchSpec> arch_preset(std::string_view name) {
  if (name == "llama7b") return llama7b();
  if (name == "llama13b") return llama13b();
  return std::nullopt;
}

ArchSpec arch_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("architecture file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("shapes") || !j["shapes"].is_array()) {
    throw ArgumentError("architecture file needs a \"shapes\" array of [m, n] pairs");
  }
  ArchSpec arch;
  arch.name = j.value("name", std::string("custom"));
  try {
    arch.blocks = j.value("blocks", std::size_t{1});
    arch.extra_params = j.value("extra_params", std::uint64_t{0});
    for (const auto& s : j["shapes"]) {
      if (!s.is_array() || s.size() != 2) throw ArgumentError("each shape must be [m, n]");
      arch.block_shapes.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("bad architecture field: ") + e.what());
  }
  return arch;
}

}  // namespace sppft
