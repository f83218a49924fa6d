#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "birr/labels.hpp"
#include "birr/model.hpp"

namespace birr {

// The announcement payload shared by the CLI and the HTTP service.
struct PredictionResponse {
  std::string label_code;
  std::string display_amharic;
  std::string display_latin;
  std::vector<std::pair<std::string, double>> probabilities;  // label-table order
  std::string model_id;
  std::optional<double> latency_ms;

  // Field order: label_code, display_amharic, display_latin, probabilities,
  // model_id, then latency_ms when present.
  nlohmann::ordered_json to_json() const;
  static PredictionResponse from_json(const nlohmann::json& j);
};

// Loaded model plus label table. classify() is const and thread-safe.
class Classifier {
 public:
  // Throws ConfigError when the label count differs from the model's
  // class count.
  Classifier(Model model, LabelTable labels, std::string model_id);

  // model_id is the SHA-256 of the weight file. An empty labels path uses
  // the built-in table.
  static Classifier load(const std::filesystem::path& model_path,
                         const std::filesystem::path& labels_path = {});

  // decode -> resize -> normalize -> infer. Throws UnsupportedFormatError or
  // DecodeError for bad bytes. latency_ms is left empty.
  PredictionResponse classify(std::span<const std::uint8_t> image_bytes) const;

  const std::string& model_id() const { return model_id_; }
  const LabelTable& labels() const { return labels_; }
  const Model& model() const { return model_; }

 private:
  Model model_;
  LabelTable labels_;
  std::string model_id_;
};

}  // namespace birr
