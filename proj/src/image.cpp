#include "birr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>

#include "birr/errors.hpp"

namespace birr {
namespace {

constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};

bool is_png(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0;
}

bool is_ppm(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6';
}

class PpmReader {
 public:
  explicit PpmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes), pos_(2) {}

  long next_number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw DecodeError("ppm: malformed header");
    }
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > (1L << 24)) throw DecodeError("ppm: header value too large");
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw DecodeError("ppm: missing separator before raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

ImageBuffer decode_ppm(std::span<const std::uint8_t> bytes) {
  PpmReader reader(bytes);
  const long width = reader.next_number();
  const long height = reader.next_number();
  const long maxval = reader.next_number();
  if (width <= 0 || height <= 0) throw DecodeError("ppm: non-positive dimensions");
  if (maxval != 255) throw DecodeError("ppm: only maxval 255 is supported");
  const std::size_t start = reader.raster_start();
  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - start < need) throw DecodeError("ppm: truncated raster");
  return ImageBuffer(static_cast<int>(width), static_cast<int>(height),
                     std::vector<std::uint8_t>(bytes.begin() + start, bytes.begin() + start + need));
}

struct PngSource {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

void png_read_from_span(png_structp png, png_bytep out, png_size_t length) {
  auto* src = static_cast<PngSource*>(png_get_io_ptr(png));
  if (src->bytes.size() - src->pos < length) png_error(png, "unexpected end of stream");
  std::memcpy(out, src->bytes.data() + src->pos, length);
  src->pos += length;
}

void png_on_error(png_structp png, png_const_charp message) {
  auto* buffer = static_cast<char*>(png_get_error_ptr(png));
  std::snprintf(buffer, 256, "%s", message);
  png_longjmp(png, 1);
}

void png_on_warning(png_structp, png_const_charp) {}

// Fills rgb with 8-bit RGB rows. Returns false and sets `error` on failure.
// No objects with destructors live inside the setjmp scope.
bool decode_png_raw(PngSource* src, std::vector<std::uint8_t>* rgb,
                    std::vector<png_bytep>* rows, png_uint_32* width, png_uint_32* height,
                    char* error) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, error, png_on_error, png_on_warning);
  if (!png) {
    std::snprintf(error, 256, "out of memory");
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    std::snprintf(error, 256, "out of memory");
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, src, png_read_from_span);
  png_read_info(png, info);
  *width = png_get_image_width(png, info);
  *height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (*width == 0 || *height == 0 || *width > (1u << 15) || *height > (1u << 15)) {
    png_error(png, "unsupported dimensions");
  }
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(*width) * 3) {
    png_error(png, "unexpected row layout");
  }
  rgb->assign(static_cast<std::size_t>(*width) * *height * 3, 0);
  rows->resize(*height);
  for (png_uint_32 y = 0; y < *height; ++y) {
    (*rows)[y] = rgb->data() + static_cast<std::size_t>(y) * *width * 3;
  }
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
  PngSource src{bytes, 0};
  std::vector<std::uint8_t> rgb;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  char error[256] = "malformed stream";
  if (!decode_png_raw(&src, &rgb, &rows, &width, &height, error)) {
    throw DecodeError(std::string("png: ") + error);
  }
  return ImageBuffer(static_cast<int>(width), static_cast<int>(height), std::move(rgb));
}

}  // namespace

ImageBuffer::ImageBuffer(int w, int h, std::vector<std::uint8_t> data)
    : width(w), height(h), pixels(std::move(data)) {
  if (w <= 0 || h <= 0 || pixels.size() != static_cast<std::size_t>(w) * h * 3) {
    throw DimensionError("image buffer of " + std::to_string(pixels.size()) +
                         " bytes does not match " + std::to_string(w) + "x" + std::to_string(h));
  }
}

ImageBuffer decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (is_ppm(bytes)) return decode_ppm(bytes);
  throw UnsupportedFormatError(bytes.empty() ? "empty image stream"
                                             : "unsupported image format (expected PNG or PPM P6)");
}

ImageBuffer read_image(const std::filesystem::path& path) {
  return decode_image(read_file(path));
}

Bytes encode_ppm(const ImageBuffer& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

Bytes encode_png(const ImageBuffer& image) {
  png_image desc;
  std::memset(&desc, 0, sizeof desc);
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width);
  desc.height = static_cast<png_uint_32>(image.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw IoError(std::string("png encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& image, int out_width, int out_height) {
  if (out_width < 1 || out_height < 1) {
    throw DimensionError("resize target must be at least 1x1");
  }
  if (out_width == image.width && out_height == image.height) return image;
  ImageBuffer out(out_width, out_height);
  const double sx = static_cast<double>(image.width) / out_width;
  const double sy = static_cast<double>(image.height) / out_height;
  for (int y = 0; y < out_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1.0 - wx) + image.at(x1, y0, c) * wx;
        const double bottom = image.at(x0, y1, c) * (1.0 - wx) + image.at(x1, y1, c) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Tensor normalize(const ImageBuffer& image) {
  Tensor out(Shape{1, static_cast<std::size_t>(image.height), static_cast<std::size_t>(image.width), 3});
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out[i] = static_cast<float>(image.pixels[i] / 127.5 - 1.0);
  }
  return out;
}

std::uint8_t denormalize_value(float value) {
  const long v = std::lround((static_cast<double>(value) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
}

Tensor preprocess(const ImageBuffer& image, int resolution) {
  return normalize(resize_bilinear(image, resolution, resolution));
}

}  // namespace birr
