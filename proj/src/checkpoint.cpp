// SPDX-License-Identifier: Apache-2.0
#include "sppft/checkpoint.hpp"

#include "sppft/errors.hpp"

namespace sppft {

namespace {

constexpr std::string_view kWeightSuffix = ".weight";

Matrix read_matrix(const TensorStore& store, const std::string& name) {
  return tensor_to_matrix(store.at(name));
}

void put_matrix(TensorStore& store, const std::string& name, const Matrix& m, DType fallback) {
  const auto* existing = store.find(name);
  store.put(tensor_from_matrix(name, m, existing ? existing->dtype : fallback));
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ArgumentError("unknown activation '" + s + "'");
}

}  // namespace

Json read_meta(const TensorStore& store) {
  const auto* t = store.find(kMetaTensor);
  if (t == nullptr) return Json::object();
  try {
    auto meta = Json::parse(tensor_to_text(*t));
    if (!meta.is_object()) throw FormatError("metadata is not a JSON object", 0);
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), 0);
  }
}

void write_meta(TensorStore& store, const Json& meta) {
  store.put(tensor_from_text(std::string(kMetaTensor), meta.dump()));
}

std::vector<std::string> layer_names(const TensorStore& store) {
  std::vector<std::string> names;
  for (const auto& t : store.entries()) {
    const std::string_view name = t.name;
    if (name.size() > kWeightSuffix.size() && name.ends_with(kWeightSuffix)) {
      names.emplace_back(name.substr(0, name.size() - kWeightSuffix.size()));
    }
  }
  return names;
}

std::optional<SparsityPattern> meta_pattern(const Json& meta) {
  if (!meta.contains("pattern")) return std::nullopt;
  try {
    return SparsityPattern::parse(meta["pattern"].get<std::string>(), meta.value("ratio", 0.0),
                                  meta.value("row_wise", false));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad pattern metadata: ") + e.what(), 0);
  }
}

void set_meta_pattern(Json& meta, const SparsityPattern& pattern) {
  meta["pattern"] = pattern.label();
  meta["ratio"] = pattern.ratio();
  meta["row_wise"] = !pattern.is_n_of_m() && pattern.as_unstructured().row_wise;
}

ToyNet net_from_store(const TensorStore& store) {
  const Json meta = read_meta(store);
  const auto names = layer_names(store);
  if (names.empty()) throw FormatError("store holds no '<layer>.weight' tensors", 0);
  const auto pattern = meta_pattern(meta);

  std::vector<Activation> activations;
  if (meta.contains("activations")) {
    for (const auto& a : meta["activations"]) activations.push_back(parse_activation(a.get<std::string>()));
    if (activations.size() != names.size()) {
      throw FormatError("metadata lists " + std::to_string(activations.size()) +
                            " activations for " + std::to_string(names.size()) + " layers",
                        0);
    }
  } else {
    activations.assign(names.size(), Activation::relu);
    activations.back() = Activation::identity;
  }

  std::string kind;
  double s = 1.0;
  double p = 0.0;
  if (meta.contains("adapter")) {
    const auto& ad = meta["adapter"];
    kind = ad.value("kind", std::string());
    s = ad.value("s", 1.0);
    p = ad.value("p", 0.0);
  }

  ToyNet net;
  const std::string loss = meta.value("loss", std::string("mse"));
  if (loss == "cross_entropy") {
    net.loss = LossKind::cross_entropy;
  } else if (loss != "mse") {
    throw FormatError("unknown loss '" + loss + "'", 0);
  }

  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& name = names[i];
    Matrix w = read_matrix(store, name + ".weight");
    SparseMask mask{Matrix(w.rows(), w.cols(), 1.0), SparsityPattern::unstructured(0.0)};
    if (store.contains(name + ".mask")) {
      if (!pattern) throw FormatError("layer '" + name + "' has a mask but no pattern metadata", 0);
      mask = SparseMask{read_matrix(store, name + ".mask"), *pattern};
    }
    NetLayer layer{name, PrunedLayer{std::move(w), std::move(mask)}, std::monostate{}, activations[i]};
    if (store.contains(name + ".spp.alpha")) {
      if (kind != "spp") throw FormatError("layer '" + name + "' has SPP tensors but metadata kind is '" + kind + "'", 0);
      layer.adapter = make_spp_adapter(read_matrix(store, name + ".spp.alpha"),
                                       read_matrix(store, name + ".spp.beta"), s, p);
    } else if (store.contains(name + ".lora.a")) {
      if (kind != "lora") throw FormatError("layer '" + name + "' has LoRA tensors but metadata kind is '" + kind + "'", 0);
      layer.adapter = make_lora_adapter(read_matrix(store, name + ".lora.a"),
                                        read_matrix(store, name + ".lora.b"), s, p);
    }
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

void store_net(TensorStore& store, const ToyNet& net) {
  for (const auto& layer : net.layers) {
    const auto& name = layer.name;
    put_matrix(store, name + ".weight", layer.base.weight, DType::f64);
    if (store.contains(name + ".mask") || !(layer.base.mask.pattern.ratio() == 0.0)) {
      store.put(tensor_from_matrix(name + ".mask", layer.base.mask.mask, DType::u8));
    }
    if (const auto* spp = std::get_if<SppAdapter>(&layer.adapter)) {
      put_matrix(store, name + ".spp.alpha", spp->w_alpha, DType::f64);
      put_matrix(store, name + ".spp.beta", spp->w_beta, DType::f64);
    } else {
      store.remove(name + ".spp.alpha");
      store.remove(name + ".spp.beta");
    }
    if (const auto* lora = std::get_if<LoraAdapter>(&layer.adapter)) {
      put_matrix(store, name + ".lora.a", lora->a, DType::f64);
      put_matrix(store, name + ".lora.b", lora->b, DType::f64);
    } else {
      store.remove(name + ".lora.a");
      store.remove(name + ".lora.b");
    }
  }
}

}  // namespace sppft
