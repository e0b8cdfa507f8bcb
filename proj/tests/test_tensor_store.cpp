// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "sppft/errors.hpp"
#include "sppft/tensor_store.hpp"
#include "test_util.hpp"

using namespace sppft;

namespace {

TensorStore sample_store() {
  TensorStore s;
  s.add(tensor_from_matrix("w", Matrix::from_rows({{1.5, -2}, {0, 3}})));
  s.add(tensor_from_matrix("w32", Matrix::from_rows({{0.25, 8}}), DType::f32));
  s.add(tensor_from_matrix("mask", Matrix::from_rows({{1, 0}, {0, 1}}), DType::u8));
  s.add(tensor_from_text("__meta__", R"({"pattern":"2:4"})"));
  return s;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(TensorStore, EmptyStoreIsBareHeader) {
  // magic (4) + version (4) + count (4)
  const auto bytes = TensorStore{}.serialize();
  ASSERT_EQ(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SPPT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(TensorStore::deserialize(bytes), TensorStore{});
}

TEST(TensorStore, LayoutOfOneTensor) {
  TensorStore s;
  s.add(tensor_from_matrix("ab", Matrix::from_rows({{1, 2, 3}}), DType::u8));
  const auto bytes = s.serialize();
  // header 12 + name_len 4 + name 2 + ndim 4 + dims 16 + dtype 1 + payload 3
  ASSERT_EQ(bytes.size(), 42u);
  EXPECT_EQ(bytes[8], 1);    // tensor count
  EXPECT_EQ(bytes[12], 2);   // name length
  EXPECT_EQ(bytes[18], 2);   // ndim
  EXPECT_EQ(bytes[22], 1);   // rows
  EXPECT_EQ(bytes[30], 3);   // cols
  EXPECT_EQ(bytes[38], 3);   // dtype u8
  EXPECT_EQ(bytes[41], 3);   // last payload byte
}

TEST(TensorStore, RoundTripThroughFile) {
  const auto dir = sppft::testing::scratch_dir("store_rt");
  const TensorStore s = sample_store();
  store_write(s, dir / "a.sppt");
  const TensorStore back = store_read(dir / "a.sppt");
  EXPECT_EQ(back, s);
  store_write(back, dir / "b.sppt");
  EXPECT_EQ(slurp(dir / "a.sppt"), slurp(dir / "b.sppt"));
  EXPECT_FALSE(std::filesystem::exists(dir / "a.sppt.tmp"));
}

TEST(TensorStore, DtypeConversions) {
  const TensorStore s = sample_store();
  EXPECT_EQ(tensor_to_matrix(s.at("w")), Matrix::from_rows({{1.5, -2}, {0, 3}}));
  EXPECT_EQ(tensor_to_matrix(s.at("w32")), Matrix::from_rows({{0.25, 8}}));
  EXPECT_EQ(tensor_to_matrix(s.at("mask")), Matrix::from_rows({{1, 0}, {0, 1}}));
  EXPECT_EQ(tensor_to_text(s.at("__meta__")), R"({"pattern":"2:4"})");
  EXPECT_THROW(tensor_from_matrix("bad", Matrix::from_rows({{0.5}}), DType::u8), ArgumentError);
  EXPECT_THROW(tensor_from_matrix("bad", Matrix::from_rows({{256}}), DType::u8), ArgumentError);
}

TEST(TensorStore, NamesAreUnique) {
  TensorStore s = sample_store();
  EXPECT_THROW(s.add(tensor_from_matrix("w", Matrix(1, 1))), ArgumentError);
  s.put(tensor_from_matrix("w", Matrix(1, 1, 9.0)));
  EXPECT_EQ(s.entries().front().name, "w");
  EXPECT_EQ(tensor_to_matrix(s.at("w")), Matrix(1, 1, 9.0));
  EXPECT_TRUE(s.remove("w"));
  EXPECT_FALSE(s.contains("w"));
}

TEST(TensorStore, PayloadLengthMustMatchDims) {
  Tensor t = tensor_from_matrix("x", Matrix(2, 2));
  t.payload.pop_back();
  TensorStore s;
  EXPECT_THROW(s.add(t), ArgumentError);
}

TEST(TensorStore, TruncatedPayloadNamesTensor) {
  auto bytes = sample_store().serialize();
  bytes.resize(bytes.size() - 20);
  try {
    TensorStore::deserialize(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("tensor '__meta__'"), std::string::npos) << e.what();
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(TensorStore, CorruptHeaderReportsOffset) {
  auto bytes = sample_store().serialize();
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    TensorStore::deserialize(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto bad_version = bytes;
  bad_version[4] = 2;
  try {
    TensorStore::deserialize(bad_version);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(TensorStore::deserialize(trailing), FormatError);
  EXPECT_THROW(TensorStore::deserialize({'S', 'P'}), FormatError);
}

TEST(TensorStore, MissingFileIsAnError) {
  EXPECT_THROW(store_read("/nonexistent/dir/x.sppt"), Error);
}
