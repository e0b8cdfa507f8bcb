// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sppft/tensor_store.hpp"
#include "sppft/training.hpp"

namespace sppft {

/// Model checkpoints are single TensorStore files:
///   "<layer>.weight"                     f64/f32 (m x n), in network order
///   "<layer>.mask"                       u8 (m x n), absent for dense layers
///   "<layer>.spp.alpha", ".spp.beta"     SPP factors, or
///   "<layer>.lora.a", ".lora.b"          LoRA factors
///   "__meta__"                           u8 UTF-8 JSON:
///     {"pattern": "2:4" | "unstructured", "ratio": r, "row_wise": bool,
///      "adapter": {"kind": "spp" | "lora", "r": r, "s": s, "p": p},
///      "activations": ["relu", ..., "identity"], "loss": "mse"}
inline constexpr std::string_view kMetaTensor = "__meta__";

using Json = nlohmann::ordered_json;

Json read_meta(const TensorStore& store);
void write_meta(TensorStore& store, const Json& meta);

/// Layer names in the order their ".weight" tensors appear.
std::vector<std::string> layer_names(const TensorStore& store);

/// Reads the pattern recorded in the metadata, if any.
std::optional<SparsityPattern> meta_pattern(const Json& meta);
void set_meta_pattern(Json& meta, const SparsityPattern& pattern);

ToyNet net_from_store(const TensorStore& store);

/// Writes weights, masks and adapter tensors of `net` into `store`.
/// Existing tensors are replaced in place and keep their dtype; adapter
/// tensors of layers that no longer carry one are removed. Metadata is
/// left to the caller.
void store_net(TensorStore& store, const ToyNet& net);

}  // namespace sppft
