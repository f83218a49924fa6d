#include "birr/weights_io.hpp"

#include <bit>
#include <cstring>

#include "birr/errors.hpp"

namespace birr {
namespace {

using Json = nlohmann::ordered_json;

constexpr std::size_t kPreamble = sizeof(kWeightMagic) + 4;

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

struct ParsedHeader {
  nlohmann::json doc;
  std::span<const std::uint8_t> blob;
};

ParsedHeader parse_header(std::span<const std::uint8_t> bytes) {
  const std::size_t magic_len = sizeof(kWeightMagic);
  const std::size_t probe = std::min(bytes.size(), magic_len);
  if (std::memcmp(bytes.data(), kWeightMagic, probe) != 0) {
    throw BadMagicError("not a weight file: magic mismatch");
  }
  if (bytes.size() < kPreamble) throw TruncatedFileError("weight file truncated in preamble");
  const std::uint32_t header_len = get_u32(bytes.data() + magic_len);
  if (bytes.size() - kPreamble < header_len) {
    throw TruncatedFileError("weight file truncated in header");
  }
  ParsedHeader parsed;
  try {
    parsed.doc = nlohmann::json::parse(bytes.begin() + kPreamble,
                                       bytes.begin() + kPreamble + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw WeightFormatError(std::string("malformed weight header: ") + e.what());
  }
  parsed.blob = bytes.subspan(kPreamble + header_len);
  return parsed;
}

std::vector<std::size_t> shape_of(const nlohmann::json& entry) {
  return entry.at("shape").get<std::vector<std::size_t>>();
}

Model fill_model(const ModelConfig& config, const ParsedHeader& header) {
  Rng rng(0);
  Model model = build_model<float>(config, rng);
  const auto& doc = header.doc;
  try {
    const auto& tensors = doc.at("tensors");
    auto views = parameter_views(model);
    // Shape problems are reported before size problems so that a loaded
    // architecture mismatch is named even if the blob is also short.
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& view = views[i];
      if (i >= tensors.size()) {
        throw ShapeMismatchError(view.name, "weight file lacks tensor " + view.name);
      }
      const auto& entry = tensors[i];
      const auto name = entry.at("name").get<std::string>();
      const auto shape = shape_of(entry);
      const auto expected = view.shape.dims();
      if (name != view.name || shape != std::vector<std::size_t>(expected.begin(), expected.end())) {
        throw ShapeMismatchError(view.name, "tensor " + view.name + " expects shape " +
                                                view.shape.str() + "; file has " + name + " " +
                                                nlohmann::json(shape).dump());
      }
    }
    if (tensors.size() != views.size()) {
      throw ShapeMismatchError(tensors[views.size()].at("name").get<std::string>(),
                               "weight file has extra tensors");
    }
    const auto& layers = doc.at("layers");
    if (layers.size() != model.layers.size()) {
      throw WeightFormatError("weight file lists " + std::to_string(layers.size()) +
                              " layers, architecture has " + std::to_string(model.layers.size()));
    }
    const std::size_t blob_bytes = doc.at("blob_bytes").get<std::size_t>();
    if (header.blob.size() < blob_bytes) {
      throw TruncatedFileError("weight blob truncated: expected " + std::to_string(blob_bytes) +
                               " bytes, found " + std::to_string(header.blob.size()));
    }
    if (header.blob.size() > blob_bytes) throw WeightFormatError("trailing bytes after weight blob");

    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto offset = tensors[i].at("offset").get<std::size_t>();
      const auto length = tensors[i].at("length").get<std::size_t>();
      if (length != views[i].values.size() * 4 || offset % 4 != 0) {
        throw WeightFormatError("bad extent for tensor " + views[i].name);
      }
      if (offset > blob_bytes || blob_bytes - offset < length) {
        throw TruncatedFileError("tensor " + views[i].name + " extends past the blob");
      }
      const std::uint8_t* src = header.blob.data() + offset;
      for (auto& v : views[i].values) {
        v = std::bit_cast<float>(get_u32(src));
        src += 4;
      }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].at("name").get<std::string>() != model.layers[i].name) {
        throw WeightFormatError("layer " + std::to_string(i) + " name mismatch");
      }
      model.layers[i].trainable = layers[i].at("trainable").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw WeightFormatError(std::string("malformed weight header: ") + e.what());
  }
  return model;
}

}  // namespace

nlohmann::ordered_json config_to_json(const ModelConfig& config) {
  return {{"width_multiplier", config.width_multiplier},
          {"input_resolution", config.input_resolution},
          {"num_classes", config.num_classes},
          {"head_pooling", to_string(config.head_pooling)},
          {"dropout_rate", config.dropout_rate},
          {"bn_momentum", config.bn_momentum},
          {"bn_epsilon", config.bn_epsilon}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.width_multiplier = j.value("width_multiplier", c.width_multiplier);
  c.input_resolution = j.value("input_resolution", c.input_resolution);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.head_pooling = parse_head_pooling(j.value("head_pooling", to_string(c.head_pooling)));
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
  return c;
}

Bytes serialize_weights(const Model& model) {
  Json layers = Json::array();
  for (const auto& l : model.layers) {
    layers.push_back({{"name", l.name}, {"kind", to_string(l.kind)}, {"trainable", l.trainable}});
  }
  Json tensors = Json::array();
  std::size_t offset = 0;
  const auto views = parameter_views(model);
  for (const auto& v : views) {
    const auto d = v.shape.dims();
    const std::size_t length = v.values.size() * 4;
    tensors.push_back({{"name", v.name},
                       {"shape", {d[0], d[1], d[2], d[3]}},
                       {"trainable", model.layers[v.layer].trainable},
                       {"offset", offset},
                       {"length", length}});
    offset += length;
  }
  Json doc = {{"format", "BIRRW001"},
              {"config", config_to_json(model.config)},
              {"layers", layers},
              {"tensors", tensors},
              {"blob_bytes", offset}};
  std::string header = doc.dump();
  while ((kPreamble + header.size()) % 4 != 0) header.push_back(' ');

  Bytes out(kWeightMagic, kWeightMagic + sizeof(kWeightMagic));
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + offset);
  for (const auto& v : views) {
    for (float f : v.values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Model deserialize_weights(const ModelConfig& config, std::span<const std::uint8_t> bytes) {
  return fill_model(config, parse_header(bytes));
}

Model deserialize_weights(std::span<const std::uint8_t> bytes) {
  const ParsedHeader header = parse_header(bytes);
  ModelConfig config;
  try {
    config = config_from_json(header.doc.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw WeightFormatError(std::string("weight header lacks a config: ") + e.what());
  }
  return fill_model(config, header);
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  write_file(path, serialize_weights(model));
}

Model load_weights(const ModelConfig& config, const std::filesystem::path& path) {
  return deserialize_weights(config, read_file(path));
}

Model load_model(const std::filesystem::path& path) {
  return deserialize_weights(read_file(path));
}

}  // namespace birr
