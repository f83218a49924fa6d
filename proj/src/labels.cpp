#include "birr/labels.hpp"

#include <algorithm>

#include "birr/errors.hpp"
#include "birr/io.hpp"

namespace birr {

LabelTable::LabelTable(std::vector<ClassLabel> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ConfigError("label table is empty");
  int others = 0;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i].id != static_cast<int>(i)) {
      throw ConfigError("label ids must be 0.." + std::to_string(labels_.size() - 1) +
                        " in order; found " + std::to_string(labels_[i].id) + " at position " +
                        std::to_string(i));
    }
    if (labels_[i].code.empty()) throw ConfigError("label " + std::to_string(i) + " has no code");
    if (labels_[i].code == kOtherCode) ++others;
    for (std::size_t j = 0; j < i; ++j) {
      if (labels_[j].code == labels_[i].code) {
        throw ConfigError("duplicate label code " + labels_[i].code);
      }
    }
  }
  if (others != 1) throw ConfigError("label table must contain exactly one OTHER class");
}

LabelTable LabelTable::defaults() {
  // Amharic strings are shipped defaults; deployments may override them via
  // the labels file.
  return LabelTable({
      {0, "ETB_5", "አምስት ብር", "Amist birr"},
      {1, "ETB_10", "አስር ብር", "Asir birr"},
      {2, "ETB_50", "ሃምሳ ብር", "Hamsa birr"},
      {3, "ETB_100", "መቶ ብር", "Meto birr"},
      {4, "ETB_200", "ሁለት መቶ ብር", "Hulet meto birr"},
      {5, kOtherCode, "የብር ኖት አይደለም", "Not a banknote"},
  });
}

const ClassLabel& LabelTable::at(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= labels_.size()) {
    throw ConfigError("class id " + std::to_string(id) + " out of range");
  }
  return labels_[static_cast<std::size_t>(id)];
}

std::optional<int> LabelTable::find(const std::string& code) const {
  for (const auto& l : labels_) {
    if (l.code == code) return l.id;
  }
  return std::nullopt;
}

nlohmann::ordered_json LabelTable::to_json() const {
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (const auto& l : labels_) {
    classes.push_back({{"id", l.id},
                       {"code", l.code},
                       {"display_amharic", l.display_amharic},
                       {"display_latin", l.display_latin}});
  }
  return {{"classes", classes}};
}

LabelTable LabelTable::from_json(const nlohmann::json& j) {
  try {
    std::vector<ClassLabel> labels;
    for (const auto& c : j.at("classes")) {
      labels.push_back({c.at("id").get<int>(), c.at("code").get<std::string>(),
                        c.value("display_amharic", std::string()),
                        c.value("display_latin", std::string())});
    }
    std::sort(labels.begin(), labels.end(),
              [](const ClassLabel& a, const ClassLabel& b) { return a.id < b.id; });
    return LabelTable(std::move(labels));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed labels document: ") + e.what());
  }
}

LabelTable load_labels(const std::filesystem::path& path) {
  try {
    return LabelTable::from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse labels file " + path.string() + ": " + e.what());
  }
}

void save_labels(const LabelTable& labels, const std::filesystem::path& path) {
  write_text(path, labels.to_json().dump(2) + "\n");
}

}  // namespace birr
