#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "birr/io.hpp"
#include "birr/tensor.hpp"

namespace birr {

// Row-major 8-bit RGB.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}
  ImageBuffer(int w, int h, std::vector<std::uint8_t> data);

  std::uint8_t at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

// Accepts binary PPM (P6, maxval 255) and PNG. PNG palette, grayscale and
// 16-bit inputs are expanded to 8-bit RGB; alpha is discarded.
// Throws UnsupportedFormatError for an unknown magic (including empty input)
// and DecodeError for a malformed stream.
ImageBuffer decode_image(std::span<const std::uint8_t> bytes);

ImageBuffer read_image(const std::filesystem::path& path);

Bytes encode_ppm(const ImageBuffer& image);
Bytes encode_png(const ImageBuffer& image);

// Bilinear resampling with half-pixel centers and edge clamping. A same-size
// resize returns the input unchanged.
ImageBuffer resize_bilinear(const ImageBuffer& image, int out_width, int out_height);

// Maps bytes to [-1, 1] by x / 127.5 - 1. Output is 1 x H x W x 3.
Tensor normalize(const ImageBuffer& image);

// Inverse of the normalization map, rounded to the nearest byte.
std::uint8_t denormalize_value(float value);

// decode -> resize to resolution x resolution -> normalize.
Tensor preprocess(const ImageBuffer& image, int resolution);

}  // namespace birr
