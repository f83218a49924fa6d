#pragma once

#include <filesystem>
#include <span>

#include <json.hpp>

#include "birr/io.hpp"
#include "birr/model.hpp"

// Weight file layout (all integers little-endian):
//   8 bytes   magic "BIRRW001"
//   4 bytes   u32 header length L
//   L bytes   UTF-8 JSON header: config echo, per-layer kind/trainable flags,
//             and one {name, shape, trainable, offset, length} per tensor
//   blob      raw little-endian float32 values; offsets are relative to the
//             blob start and every tensor starts 4-byte aligned
// The header is space-padded so that the blob itself starts on a 4-byte
// boundary of the file.
namespace birr {

inline constexpr char kWeightMagic[8] = {'B', 'I', 'R', 'R', 'W', '0', '0', '1'};

nlohmann::ordered_json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

Bytes serialize_weights(const Model& model);

// Rebuilds the architecture from `config` and fills it from `bytes`.
// Throws BadMagicError, ShapeMismatchError (naming the first offending
// tensor), TruncatedFileError, or WeightFormatError for other defects.
Model deserialize_weights(const ModelConfig& config, std::span<const std::uint8_t> bytes);

// Same, with the architecture taken from the header's config echo.
Model deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const ModelConfig& config, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace birr
