// SPDX-License-Identifier: Apache-2.0
#include "sppft/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <system_error>

#include "sppft/errors.hpp"

namespace sppft {

namespace {

constexpr std::uint8_t kMagic[4] = {'S', 'P', 'P', 'T'};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
    u = static_cast<U>(u >> 8);
  }
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t offset() const noexcept { return pos_; }

  template <typename T>
  T take(const std::string& what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  void take_bytes(std::size_t n, std::vector<std::uint8_t>& out, const std::string& what) {
    need(n, what);
    out.assign(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
               bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const std::string& what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated store: " + what + " needs " + std::to_string(n) +
                            " bytes, " + std::to_string(bytes_.size() - pos_) + " remain",
                        pos_);
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void check_payload(const Tensor& t) {
  const std::uint64_t expected = t.element_count() * dtype_width(t.dtype);
  if (t.payload.size() != expected) {
    throw ArgumentError("tensor '" + t.name + "': payload is " +
                        std::to_string(t.payload.size()) + " bytes, expected " +
                        std::to_string(expected));
  }
}

}  // namespace

std::size_t dtype_width(DType dtype) noexcept {
  switch (dtype) {
    case DType::f64: return 8;
    case DType::f32: return 4;
    case DType::u8: return 1;
  }
  return 0;
}

std::string_view dtype_name(DType dtype) noexcept {
  switch (dtype) {
    case DType::f64: return "f64";
    case DType::f32: return "f32";
    case DType::u8: return "u8";
  }
  return "?";
}

std::uint64_t Tensor::element_count() const noexcept {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor tensor_from_matrix(std::string name, const Matrix& m, DType dtype) {
  if (m.empty()) throw ShapeError("tensor_from_matrix: empty matrix for '" + name + "'");
  Tensor t{std::move(name), {m.rows(), m.cols()}, dtype, {}};
  t.payload.reserve(m.size() * dtype_width(dtype));
  for (double v : m.data()) {
    switch (dtype) {
      case DType::f64: put_le(t.payload, std::bit_cast<std::uint64_t>(v)); break;
      case DType::f32: put_le(t.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v))); break;
      case DType::u8:
        if (v < 0.0 || v > 255.0 || v != std::floor(v)) {
          throw ArgumentError("tensor '" + t.name + "': value not representable as u8");
        }
        t.payload.push_back(static_cast<std::uint8_t>(v));
        break;
    }
  }
  return t;
}

Matrix tensor_to_matrix(const Tensor& t) {
  if (t.dims.size() != 2) {
    throw ShapeError("tensor '" + t.name + "' has " + std::to_string(t.dims.size()) +
                     " dims, expected 2");
  }
  check_payload(t);
  const std::size_t count = t.element_count();
  std::vector<double> data(count);
  const auto* p = t.payload.data();
  for (std::size_t i = 0; i < count; ++i) {
    switch (t.dtype) {
      case DType::f64: {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(p[i * 8 + b]) << (8 * b);
        data[i] = std::bit_cast<double>(u);
        break;
      }
      case DType::f32: {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(p[i * 4 + b]) << (8 * b);
        data[i] = static_cast<double>(std::bit_cast<float>(u));
        break;
      }
      case DType::u8: data[i] = p[i]; break;
    }
  }
  return Matrix(t.dims[0], t.dims[1], std::move(data));
}

Tensor tensor_from_text(std::string name, std::string_view text) {
  Tensor t{std::move(name), {text.size()}, DType::u8, {}};
  t.payload.assign(text.begin(), text.end());
  return t;
}

std::string tensor_to_text(const Tensor& t) {
  if (t.dtype != DType::u8) throw ArgumentError("tensor '" + t.name + "' is not u8 text");
  return {t.payload.begin(), t.payload.end()};
}

bool TensorStore::contains(std::string_view name) const noexcept { return find(name) != nullptr; }

const Tensor* TensorStore::find(std::string_view name) const noexcept {
  auto it = std::ranges::find(entries_, name, &Tensor::name);
  return it == entries_.end() ? nullptr : &*it;
}

const Tensor& TensorStore::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw ArgumentError("store has no tensor named '" + std::string(name) + "'");
}

void TensorStore::add(Tensor t) {
  if (contains(t.name)) throw ArgumentError("duplicate tensor name '" + t.name + "'");
  check_payload(t);
  entries_.push_back(std::move(t));
}

void TensorStore::put(Tensor t) {
  check_payload(t);
  auto it = std::ranges::find(entries_, t.name, &Tensor::name);
  if (it == entries_.end()) {
    entries_.push_back(std::move(t));
  } else {
    *it = std::move(t);
  }
}

bool TensorStore::remove(std::string_view name) {
  return std::erase_if(entries_, [&](const Tensor& t) { return t.name == name; }) > 0;
}

std::vector<std::uint8_t> TensorStore::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le(out, kVersion);
  put_le(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& t : entries_) {
    put_le(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_le(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_le(out, d);
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.insert(out.end(), t.payload.begin(), t.payload.end());
  }
  return out;
}

TensorStore TensorStore::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  std::vector<std::uint8_t> magic;
  in.take_bytes(4, magic, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw FormatError("bad magic, not an SPPT store", 0);
  }
  const auto version = in.take<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported store version " + std::to_string(version), 4);
  }
  const auto count = in.take<std::uint32_t>("tensor count");

  TensorStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor #" + std::to_string(i);
    const auto name_len = in.take<std::uint32_t>(where + " name length");
    std::vector<std::uint8_t> name_bytes;
    in.take_bytes(name_len, name_bytes, where + " name");
    Tensor t;
    t.name.assign(name_bytes.begin(), name_bytes.end());
    const std::string label = "tensor '" + t.name + "'";
    const auto ndim = in.take<std::uint32_t>(label + " ndim");
    for (std::uint32_t d = 0; d < ndim; ++d) t.dims.push_back(in.take<std::uint64_t>(label + " dims"));
    const auto dtype_offset = in.offset();
    const auto raw_dtype = in.take<std::uint8_t>(label + " dtype");
    if (raw_dtype < 1 || raw_dtype > 3) {
      throw FormatError(label + ": unknown dtype " + std::to_string(raw_dtype), dtype_offset);
    }
    t.dtype = static_cast<DType>(raw_dtype);
    const std::uint64_t width = dtype_width(t.dtype);
    const std::uint64_t count_elems = t.element_count();
    if (width != 0 && count_elems > (bytes.size() / width) + 1) {
      throw FormatError(label + ": payload truncated", in.offset());
    }
    in.take_bytes(static_cast<std::size_t>(count_elems * width), t.payload, label + " payload");
    if (store.contains(t.name)) {
      throw FormatError("duplicate tensor name '" + t.name + "'", in.offset());
    }
    store.entries_.push_back(std::move(t));
  }
  if (!in.at_end()) throw FormatError("trailing bytes after last tensor", in.offset());
  return store;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
  }
}

void store_write(const TensorStore& store, const std::filesystem::path& path) {
  const auto bytes = store.serialize();
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

TensorStore store_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return TensorStore::deserialize(bytes);
}

}  // namespace sppft
