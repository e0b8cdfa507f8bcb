// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sppft/numerics.hpp"

namespace sppft {

enum class DType : std::uint8_t { f64 = 1, f32 = 2, u8 = 3 };

std::size_t dtype_width(DType dtype) noexcept;
std::string_view dtype_name(DType dtype) noexcept;

/// One named tensor with raw little-endian row-major payload.
struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  DType dtype = DType::f64;
  std::vector<std::uint8_t> payload;

  std::uint64_t element_count() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Encodes a 2-D matrix. f32 narrows each entry; u8 requires entries that
/// are integers in [0, 255].
Tensor tensor_from_matrix(std::string name, const Matrix& m, DType dtype = DType::f64);

/// Decodes a 2-D tensor of any dtype into a matrix of doubles.
Matrix tensor_to_matrix(const Tensor& t);

/// Wraps UTF-8 text as a 1-D u8 tensor.
Tensor tensor_from_text(std::string name, std::string_view text);
std::string tensor_to_text(const Tensor& t);

/// Ordered collection of uniquely named tensors.
///
/// File layout (all integers little-endian):
///   "SPPT" | u32 version=1 | u32 tensor_count |
///   per tensor: u32 name_len | name | u32 ndim | u64 dims[ndim] | u8 dtype | payload
class TensorStore {
 public:
  static constexpr std::uint32_t kVersion = 1;

  const std::vector<Tensor>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  bool contains(std::string_view name) const noexcept;
  const Tensor& at(std::string_view name) const;
  const Tensor* find(std::string_view name) const noexcept;

  /// Appends a tensor. Throws ArgumentError on a duplicate name or a
  /// payload whose length disagrees with dims and dtype.
  void add(Tensor t);

  /// Replaces the tensor of the same name in place, or appends it.
  void put(Tensor t);

  bool remove(std::string_view name);

  std::vector<std::uint8_t> serialize() const;
  static TensorStore deserialize(const std::vector<std::uint8_t>& bytes);

  friend bool operator==(const TensorStore&, const TensorStore&) = default;

 private:
  std::vector<Tensor> entries_;
};

/// Writes atomically: the bytes land in a sibling temp file that is then
/// renamed over `path`.
void store_write(const TensorStore& store, const std::filesystem::path& path);
TensorStore store_read(const std::filesystem::path& path);

/// Atomic write of arbitrary bytes, shared by the CSV/JSON emitters.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace sppft
