#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "birr/errors.hpp"
#include "birr/image.hpp"
#include "birr/io.hpp"
#include "birr/labels.hpp"
#include "birr/random.hpp"

namespace birr {
namespace {

Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

ImageBuffer random_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuffer img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return img;
}

TEST(Decode, P6TwoPixels) {
  Bytes ppm = bytes_of("P6\n2 1\n255\n");
  for (int v : {255, 0, 0, 0, 255, 0}) ppm.push_back(static_cast<std::uint8_t>(v));
  const ImageBuffer img = decode_image(ppm);
  EXPECT_EQ(img.width, 2);
  EXPECT_EQ(img.height, 1);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0}));
}

TEST(Decode, P6HeaderCommentsAreSkipped) {
  Bytes ppm = bytes_of("P6 # comment\n1 1\n# another\n255\n");
  for (int v : {1, 2, 3}) ppm.push_back(static_cast<std::uint8_t>(v));
  EXPECT_EQ(decode_image(ppm).pixels, (std::vector<std::uint8_t>{1, 2, 3}));
}

TEST(Decode, PngMatchesPpmForSamePixels) {
  const ImageBuffer img(2, 1, std::vector<std::uint8_t>{255, 0, 0, 0, 255, 0});
  EXPECT_EQ(decode_image(encode_png(img)), decode_image(encode_ppm(img)));
  const ImageBuffer big = random_image(17, 9, 4);
  EXPECT_EQ(decode_image(encode_png(big)), big);
}

TEST(Decode, PpmRoundTripIsBitwiseStable) {
  const ImageBuffer img = random_image(13, 7, 1);
  const Bytes once = encode_ppm(decode_image(encode_ppm(img)));
  EXPECT_EQ(once, encode_ppm(img));
}

TEST(Decode, EmptyStreamIsUnsupported) {
  EXPECT_THROW(decode_image(Bytes{}), UnsupportedFormatError);
  EXPECT_THROW(decode_image(bytes_of("GIF89a")), UnsupportedFormatError);
}

TEST(Decode, MalformedStreamsAreDecodeErrors) {
  EXPECT_THROW(decode_image(bytes_of("P6\n2 1\n255\nabc")), DecodeError);  // short
  EXPECT_THROW(decode_image(bytes_of("P6\n2 1\n65535\n")), DecodeError);
  EXPECT_THROW(decode_image(bytes_of("P6\nx 1\n255\n")), DecodeError);
  Bytes png = encode_png(random_image(8, 8, 2));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_image(png), DecodeError);
}

TEST(Resize, SameSizeIsIdentity) {
  const ImageBuffer img = random_image(10, 10, 3);
  EXPECT_EQ(resize_bilinear(img, 10, 10), img);
}

TEST(Resize, ConstantStaysConstant) {
  const ImageBuffer img(5, 3, 77);
  for (auto [w, h] : {std::pair{1, 1}, {9, 4}, {32, 32}, {2, 7}}) {
    const ImageBuffer out = resize_bilinear(img, w, h);
    EXPECT_EQ(out.width, w);
    for (auto p : out.pixels) EXPECT_EQ(p, 77);
  }
}

TEST(Resize, TwoToFourIsMonotoneFromZeroTo255) {
  // Half-pixel centers: source x = (i + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75,
  // 1.25, clamped to [0, 1] -> weights 0, 0.25, 0.75, 1.
  const ImageBuffer img(2, 1, std::vector<std::uint8_t>{0, 0, 0, 255, 255, 255});
  const ImageBuffer out = resize_bilinear(img, 4, 1);
  const int expected[] = {0, 64, 191, 255};
  for (int x = 0; x < 4; ++x) {
    EXPECT_EQ(out.at(x, 0, 0), expected[x]) << x;
    if (x > 0) EXPECT_GE(out.at(x, 0, 0), out.at(x - 1, 0, 0));
  }
}

TEST(Normalize, EndpointsAndMidpoints) {
  const ImageBuffer img(4, 1, std::vector<std::uint8_t>{0, 0, 0, 255, 255, 255, 127, 127, 127,
                                                         128, 128, 128});
  const Tensor t = normalize(img);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 4, 3}));
  EXPECT_FLOAT_EQ(t.at(0, 0, 0, 0), -1.0f);
  EXPECT_FLOAT_EQ(t.at(0, 0, 1, 0), 1.0f);
  EXPECT_NEAR(t.at(0, 0, 2, 0), -1.0 / 255.0, 1e-6);
  EXPECT_NEAR(t.at(0, 0, 3, 0), 1.0 / 255.0, 1e-6);
  EXPECT_NEAR(t.at(0, 0, 2, 0) + t.at(0, 0, 3, 0), 0.0, 1e-6);
}

TEST(Normalize, InverseRoundTripsEveryByte) {
  ImageBuffer img(256, 1);
  for (int v = 0; v < 256; ++v)
    for (int c = 0; c < 3; ++c) img.at(v, 0, c) = static_cast<std::uint8_t>(v);
  const Tensor t = normalize(img);
  for (int v = 0; v < 256; ++v) {
    const float x = t.at(0, 0, v, 1);
    EXPECT_GE(x, -1.0f);
    EXPECT_LE(x, 1.0f);
    EXPECT_EQ(denormalize_value(x), v);
  }
}

TEST(Preprocess, ShapeContract) {
  EXPECT_EQ(preprocess(ImageBuffer(224, 224, 9), 224).shape(), (Shape{1, 224, 224, 3}));
  EXPECT_EQ(preprocess(ImageBuffer(50, 20, 9), 32).shape(), (Shape{1, 32, 32, 3}));
}

TEST(Io, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex(bytes_of("abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, MissingFileIsIoError) {
  EXPECT_THROW(read_file("/nonexistent/birr/file"), IoError);
}

TEST(Labels, DefaultsHaveSixClassesWithOneOther) {
  const LabelTable t = LabelTable::defaults();
  ASSERT_EQ(t.size(), 6u);
  const char* codes[] = {"ETB_5", "ETB_10", "ETB_50", "ETB_100", "ETB_200", "OTHER"};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(t.at(i).id, i);
    EXPECT_EQ(t.at(i).code, codes[i]);
    EXPECT_FALSE(t.at(i).display_amharic.empty());
    EXPECT_FALSE(t.at(i).display_latin.empty());
  }
  EXPECT_EQ(t.find("ETB_100"), 3);
  EXPECT_FALSE(t.find("ETB_1000").has_value());
}

TEST(Labels, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "birr_labels_test.json";
  save_labels(LabelTable::defaults(), path);
  EXPECT_EQ(load_labels(path), LabelTable::defaults());
  std::filesystem::remove(path);
}

TEST(Labels, ValidationRejectsBadTables) {
  auto labels = LabelTable::defaults().labels();
  auto dup = labels;
  dup[5].code = "ETB_5";  // no OTHER, duplicate code
  EXPECT_THROW(LabelTable{dup}, ConfigError);
  auto gap = labels;
  gap[2].id = 7;
  EXPECT_THROW(LabelTable{gap}, ConfigError);
}

}  // namespace
}  // namespace birr
