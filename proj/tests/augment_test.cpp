#include <gtest/gtest.h>

#include <cmath>

#include "birr/augment.hpp"
#include "birr/errors.hpp"

namespace birr {
namespace {

TEST(SampleAffine, ZeroRangesGiveIdentity) {
  AugmentConfig c{0, 0, 0, 0};
  Rng rng(1);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(sample_affine(c, 64, 64, rng).is_identity());
}

TEST(SampleAffine, FixedSeedRepeats) {
  AugmentConfig c;
  Rng a(5), b(5);
  for (int i = 0; i < 50; ++i) {
    const auto pa = sample_affine(c, 40, 30, a);
    const auto pb = sample_affine(c, 40, 30, b);
    EXPECT_EQ(pa.angle_degrees, pb.angle_degrees);
    EXPECT_EQ(pa.zoom, pb.zoom);
    EXPECT_EQ(pa.dx, pb.dx);
    EXPECT_EQ(pa.dy, pb.dy);
  }
}

TEST(SampleAffine, DefaultsStayInBoundsWithCenteredAngle) {
  AugmentConfig c;
  Rng rng(11);
  double sum = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_affine(c, 64, 48, rng);
    EXPECT_LE(std::abs(p.angle_degrees), 0.2);
    EXPECT_GE(p.zoom, 0.9);
    EXPECT_LE(p.zoom, 1.1);
    EXPECT_LE(std::abs(p.dx), 64 * 0.2);
    EXPECT_LE(std::abs(p.dy), 48 * 0.2);
    sum += p.angle_degrees;
  }
  EXPECT_LT(std::abs(sum / n), 0.01);
}

TEST(ApplyAffine, IdentityIsBitwise) {
  Rng rng(2);
  ImageBuffer img(9, 7);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(uniform_index(rng, 256));
  EXPECT_EQ(apply_affine(img, AffineParams{}), img);
}

TEST(ApplyAffine, MaximalShiftOfConstantImageIsInvisible) {
  const ImageBuffer img(20, 10, 123);
  EXPECT_EQ(apply_affine(img, AffineParams{0, 1, 20, 0}), img);
  EXPECT_EQ(apply_affine(img, AffineParams{0.2, 0.9, -20, 10}), img);
}

TEST(ApplyAffine, SmallRotationPreservesWhiteArea) {
  ImageBuffer img(64, 64, 0);
  int before = 0;
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = 255;
  auto count = [](const ImageBuffer& im) {
    int n = 0;
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) n += im.at(x, y, 0) >= 128;
    return n;
  };
  before = count(img);
  const int after = count(apply_affine(img, AffineParams{0.2, 1, 0, 0}));
  EXPECT_LT(std::abs(after - before), 0.02 * before);
}

TEST(ApplyAffine, IntegerShiftMovesContent) {
  ImageBuffer img(8, 8, 0);
  img.at(2, 3, 0) = 200;
  const ImageBuffer out = apply_affine(img, AffineParams{0, 1, 3, 1});
  EXPECT_EQ(out.at(5, 4, 0), 200);
  EXPECT_EQ(out.width, 8);
  EXPECT_EQ(out.height, 8);
}

TEST(AugmentConfig, ValidationAndJson) {
  AugmentConfig c;
  c.zoom_range = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.zoom_range = 0.1;
  c.rotation_range = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  AugmentConfig d;
  d.enabled = false;
  d.rotation_range = 15;
  EXPECT_EQ(AugmentConfig::from_json(d.to_json()), d);
}

}  // namespace
}  // namespace birr
