#pragma once

#include <json.hpp>

#include "birr/image.hpp"
#include "birr/random.hpp"

namespace birr {

enum class FillMode { kNearest };

// Ranges mirror the familiar Keras-style augmentation arguments. The
// rotation range is in degrees.
struct AugmentConfig {
  double rotation_range = 0.2;
  double zoom_range = 0.1;
  double width_shift_range = 0.2;
  double height_shift_range = 0.2;
  FillMode fill = FillMode::kNearest;
  bool enabled = true;

  void validate() const;  // throws ConfigError

  nlohmann::ordered_json to_json() const;
  static AugmentConfig from_json(const nlohmann::json& j);

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct AffineParams {
  double angle_degrees = 0.0;
  double zoom = 1.0;
  double dx = 0.0;  // pixels, positive moves content right
  double dy = 0.0;  // pixels, positive moves content down

  bool is_identity() const { return angle_degrees == 0.0 && zoom == 1.0 && dx == 0.0 && dy == 0.0; }
};

// angle ~ U[-r, r], zoom ~ U[1 - z, 1 + z], dx ~ U[-w * ws, w * ws],
// dy ~ U[-h * hs, h * hs]. Exactly four draws from `rng`, in that order.
AffineParams sample_affine(const AugmentConfig& config, int width, int height, Rng& rng);

// Rotation about the center, then zoom about the center, then translation,
// resampled in one bilinear pass with nearest-edge fill.
ImageBuffer apply_affine(const ImageBuffer& image, const AffineParams& params);

}  // namespace birr
