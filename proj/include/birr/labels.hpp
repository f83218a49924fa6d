#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace birr {

struct ClassLabel {
  int id = 0;
  std::string code;
  std::string display_amharic;
  std::string display_latin;

  friend bool operator==(const ClassLabel&, const ClassLabel&) = default;
};

// Fixed id -> label mapping. Ids are 0..size()-1 with exactly one OTHER.
class LabelTable {
 public:
  static constexpr const char* kOtherCode = "OTHER";

  LabelTable() = default;
  explicit LabelTable(std::vector<ClassLabel> labels);  // validates

  // ETB_5, ETB_10, ETB_50, ETB_100, ETB_200, OTHER.
  static LabelTable defaults();

  std::size_t size() const { return labels_.size(); }
  const ClassLabel& at(int id) const;
  std::optional<int> find(const std::string& code) const;
  const std::vector<ClassLabel>& labels() const { return labels_; }

  nlohmann::ordered_json to_json() const;
  static LabelTable from_json(const nlohmann::json& j);

  friend bool operator==(const LabelTable&, const LabelTable&) = default;

 private:
  std::vector<ClassLabel> labels_;
};

LabelTable load_labels(const std::filesystem::path& path);
void save_labels(const LabelTable& labels, const std::filesystem::path& path);

}  // namespace birr
