#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "birr/errors.hpp"
#include "birr/io.hpp"
#include "birr/weights_io.hpp"

namespace birr {
namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.width_multiplier = 0.25;
  c.input_resolution = 32;
  return c;
}

// A model whose every stored value, including running statistics, is random
// and whose trainable flags are mixed.
Model scrambled_model(std::uint64_t seed) {
  Rng rng(seed);
  Model m = build_model(tiny(), rng);
  for (auto& view : parameter_views(m)) {
    for (auto& v : view.values) {
      v = static_cast<float>(view.name.ends_with("running_var") ? uniform(rng, 0.1, 3.0)
                                                                : uniform(rng, -2.0, 2.0));
    }
  }
  std::vector<bool> mask(m.layers.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < 0.5;
  set_trainable(m, mask);
  return m;
}

void expect_bitwise_equal(const Model& a, const Model& b) {
  ASSERT_EQ(a.layers.size(), b.layers.size());
  EXPECT_EQ(a.config, b.config);
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].name, b.layers[i].name);
    EXPECT_EQ(a.layers[i].trainable, b.layers[i].trainable) << a.layers[i].name;
  }
  const auto va = parameter_views(a);
  const auto vb = parameter_views(b);
  ASSERT_EQ(va.size(), vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    ASSERT_EQ(va[i].values.size(), vb[i].values.size()) << va[i].name;
    EXPECT_EQ(std::memcmp(va[i].values.data(), vb[i].values.data(), va[i].values.size_bytes()), 0)
        << va[i].name;
  }
}

TEST(WeightsIo, RoundTripIsBitwiseIncludingStateAndFlags) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Model m = scrambled_model(seed);
    const Bytes bytes = serialize_weights(m);
    expect_bitwise_equal(m, deserialize_weights(tiny(), bytes));
    expect_bitwise_equal(m, deserialize_weights(bytes));
    EXPECT_EQ(serialize_weights(deserialize_weights(bytes)), bytes);
  }
}

TEST(WeightsIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "birr_weights_test.bin";
  const Model m = scrambled_model(9);
  save_weights(m, path);
  expect_bitwise_equal(m, load_weights(tiny(), path));
  expect_bitwise_equal(m, load_model(path));
  std::filesystem::remove(path);
}

TEST(WeightsIo, LayoutHasMagicLengthAndAlignedBlob) {
  const Bytes bytes = serialize_weights(scrambled_model(4));
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::memcmp(bytes.data(), "BIRRW001", 8), 0);
  const std::uint32_t len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) |
                            (static_cast<std::uint32_t>(bytes[11]) << 24);
  EXPECT_EQ((12 + len) % 4, 0u);
  const auto header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  std::size_t expected_offset = 0;
  for (const auto& t : header.at("tensors")) {
    EXPECT_EQ(t.at("offset").get<std::size_t>(), expected_offset);
    EXPECT_EQ(t.at("offset").get<std::size_t>() % 4, 0u);
    expected_offset += t.at("length").get<std::size_t>();
  }
  EXPECT_EQ(bytes.size(), 12 + len + expected_offset);
}

TEST(WeightsIo, BadMagic) {
  Bytes bytes = serialize_weights(scrambled_model(5));
  bytes[3] = 'X';
  EXPECT_THROW(deserialize_weights(tiny(), bytes), BadMagicError);
}

TEST(WeightsIo, WrongWidthNamesFirstOffendingTensor) {
  const Bytes bytes = serialize_weights(scrambled_model(6));
  ModelConfig wide = tiny();
  wide.width_multiplier = 0.5;
  try {
    deserialize_weights(wide, bytes);
    FAIL() << "expected ShapeMismatchError";
  } catch (const ShapeMismatchError& e) {
    EXPECT_EQ(e.tensor_name(), "conv1/kernel");
    EXPECT_NE(std::string(e.what()).find("conv1/kernel"), std::string::npos);
  }
}

TEST(WeightsIo, TruncatedByOneByte) {
  Bytes bytes = serialize_weights(scrambled_model(7));
  bytes.pop_back();
  EXPECT_THROW(deserialize_weights(tiny(), bytes), TruncatedFileError);
  Bytes header_only(bytes.begin(), bytes.begin() + 10);
  EXPECT_THROW(deserialize_weights(tiny(), header_only), TruncatedFileError);
}

TEST(WeightsIo, ErrorsAreDistinctTypes) {
  // None of the three is a subtype of another.
  const Bytes good = serialize_weights(scrambled_model(8));
  Bytes magic = good;
  magic[0] = 0;
  Bytes cut = good;
  cut.pop_back();
  ModelConfig wide = tiny();
  wide.width_multiplier = 0.5;
  auto kind = [](auto&& fn) -> int {
    try {
      fn();
    } catch (const BadMagicError&) {
      return 1;
    } catch (const ShapeMismatchError&) {
      return 2;
    } catch (const TruncatedFileError&) {
      return 3;
    } catch (...) {
      return 4;
    }
    return 0;
  };
  EXPECT_EQ(kind([&] { deserialize_weights(tiny(), magic); }), 1);
  EXPECT_EQ(kind([&] { deserialize_weights(wide, good); }), 2);
  EXPECT_EQ(kind([&] { deserialize_weights(tiny(), cut); }), 3);
  Bytes extra = good;
  extra.push_back(0);
  EXPECT_THROW(deserialize_weights(tiny(), extra), WeightFormatError);
}

}  // namespace
}  // namespace birr
