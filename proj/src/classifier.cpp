#include "birr/classifier.hpp"

#include "birr/errors.hpp"
#include "birr/eval.hpp"
#include "birr/image.hpp"
#include "birr/io.hpp"
#include "birr/weights_io.hpp"

namespace birr {

nlohmann::ordered_json PredictionResponse::to_json() const {
  nlohmann::ordered_json j;
  j["label_code"] = label_code;
  j["display_amharic"] = display_amharic;
  j["display_latin"] = display_latin;
  nlohmann::ordered_json probs = nlohmann::ordered_json::object();
  for (const auto& [code, p] : probabilities) probs[code] = p;
  j["probabilities"] = probs;
  j["model_id"] = model_id;
  if (latency_ms) j["latency_ms"] = *latency_ms;
  return j;
}

PredictionResponse PredictionResponse::from_json(const nlohmann::json& j) {
  PredictionResponse r;
  r.label_code = j.at("label_code").get<std::string>();
  r.display_amharic = j.at("display_amharic").get<std::string>();
  r.display_latin = j.at("display_latin").get<std::string>();
  for (const auto& [code, p] : j.at("probabilities").items()) {
    r.probabilities.emplace_back(code, p.get<double>());
  }
  r.model_id = j.at("model_id").get<std::string>();
  if (j.contains("latency_ms")) r.latency_ms = j["latency_ms"].get<double>();
  return r;
}

Classifier::Classifier(Model model, LabelTable labels, std::string model_id)
    : model_(std::move(model)), labels_(std::move(labels)), model_id_(std::move(model_id)) {
  if (labels_.size() != static_cast<std::size_t>(model_.config.num_classes)) {
    throw ConfigError("label table has " + std::to_string(labels_.size()) +
                      " classes but the model predicts " + std::to_string(model_.config.num_classes));
  }
}

Classifier Classifier::load(const std::filesystem::path& model_path,
                            const std::filesystem::path& labels_path) {
  const Bytes bytes = read_file(model_path);
  LabelTable labels = labels_path.empty() ? LabelTable::defaults() : load_labels(labels_path);
  return Classifier(deserialize_weights(bytes), std::move(labels), sha256_hex(bytes));
}

PredictionResponse Classifier::classify(std::span<const std::uint8_t> image_bytes) const {
  const ImageBuffer image = decode_image(image_bytes);
  const Tensor x = preprocess(image, model_.config.input_resolution);
  const auto probs = forward(model_, x).probabilities;
  const auto best = static_cast<int>(argmax(probs.values()));
  const ClassLabel& label = labels_.at(best);
  PredictionResponse r;
  r.label_code = label.code;
  r.display_amharic = label.display_amharic;
  r.display_latin = label.display_latin;
  for (const auto& l : labels_.labels()) {
    r.probabilities.emplace_back(l.code, static_cast<double>(probs[static_cast<std::size_t>(l.id)]));
  }
  r.model_id = model_id_;
  return r;
}

}  // namespace birr
