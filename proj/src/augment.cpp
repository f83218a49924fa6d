#include "birr/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "birr/errors.hpp"

namespace birr {

void AugmentConfig::validate() const {
  if (rotation_range < 0 || zoom_range < 0 || width_shift_range < 0 || height_shift_range < 0) {
    throw ConfigError("augmentation ranges must be non-negative");
  }
  if (zoom_range >= 1.0) throw ConfigError("zoom_range must be below 1");
}

nlohmann::ordered_json AugmentConfig::to_json() const {
  return {{"enabled", enabled},
          {"rotation_range", rotation_range},
          {"zoom_range", zoom_range},
          {"width_shift_range", width_shift_range},
          {"height_shift_range", height_shift_range},
          {"fill", "nearest"}};
}

AugmentConfig AugmentConfig::from_json(const nlohmann::json& j) {
  AugmentConfig c;
  c.enabled = j.value("enabled", c.enabled);
  c.rotation_range = j.value("rotation_range", c.rotation_range);
  c.zoom_range = j.value("zoom_range", c.zoom_range);
  c.width_shift_range = j.value("width_shift_range", c.width_shift_range);
  c.height_shift_range = j.value("height_shift_range", c.height_shift_range);
  if (j.value("fill", std::string("nearest")) != "nearest") {
    throw ConfigError("only nearest fill is supported");
  }
  c.validate();
  return c;
}

AffineParams sample_affine(const AugmentConfig& config, int width, int height, Rng& rng) {
  AffineParams p;
  const double angle = uniform(rng, -config.rotation_range, config.rotation_range);
  const double zoom = uniform(rng, 1.0 - config.zoom_range, 1.0 + config.zoom_range);
  const double max_dx = width * config.width_shift_range;
  const double max_dy = height * config.height_shift_range;
  const double dx = uniform(rng, -max_dx, max_dx);
  const double dy = uniform(rng, -max_dy, max_dy);
  // Zero ranges give exact identity rather than lo + 0 * u.
  p.angle_degrees = config.rotation_range == 0.0 ? 0.0 : angle;
  p.zoom = config.zoom_range == 0.0 ? 1.0 : zoom;
  p.dx = max_dx == 0.0 ? 0.0 : dx;
  p.dy = max_dy == 0.0 ? 0.0 : dy;
  return p;
}

ImageBuffer apply_affine(const ImageBuffer& image, const AffineParams& params) {
  if (params.is_identity()) return image;
  const int w = image.width;
  const int h = image.height;
  const double cx = w / 2.0;
  const double cy = h / 2.0;
  const double theta = params.angle_degrees * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double inv_zoom = 1.0 / params.zoom;

  ImageBuffer out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map of the output pixel center back into the source.
      const double ux = (x + 0.5 - cx - params.dx) * inv_zoom;
      const double uy = (y + 0.5 - cy - params.dy) * inv_zoom;
      const double sx = cos_t * ux + sin_t * uy + cx - 0.5;
      const double sy = -sin_t * ux + cos_t * uy + cy - 0.5;
      const double fx = std::clamp(sx, 0.0, w - 1.0);
      const double fy = std::clamp(sy, 0.0, h - 1.0);
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double wx = fx - x0;
      const double wy = fy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1.0 - wx) + image.at(x1, y0, c) * wx;
        const double bottom = image.at(x0, y1, c) * (1.0 - wx) + image.at(x1, y1, c) * wx;
        out.at(x, y, c) = static_cast<std::uint8_t>(
            std::clamp(std::lround(top * (1.0 - wy) + bottom * wy), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace birr
