#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "birr/data.hpp"
#include "birr/labels.hpp"
#include "birr/model.hpp"

namespace birr {

// Index of the largest value; the lowest index wins exact ties.
std::size_t argmax(std::span<const float> values);

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 6)
      : classes_(classes), counts_(classes * classes, 0) {}

  void add(std::size_t truth, std::size_t predicted, std::size_t count = 1);

  std::size_t classes() const { return classes_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * classes_ + predicted];
  }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_total(std::size_t truth) const;
  std::size_t column_total(std::size_t predicted) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

struct Metrics {
  double accuracy = 0;
  std::vector<double> precision;  // 0 for a class never predicted
  std::vector<double> recall;     // 0 for a class with no samples
};

// Throws DataError for an empty matrix.
Metrics compute_metrics(const ConfusionMatrix& matrix);

struct EvalFailure {
  std::string path;
  std::string error;
};

struct EvaluationReport {
  Metrics metrics;
  ConfusionMatrix matrix;
  std::vector<EvalFailure> failures;
  std::size_t evaluated = 0;
};

// Infer-mode prediction for every entry. Undecodable images are reported in
// `failures` and excluded from the counts. Throws DataError when nothing
// could be evaluated.
EvaluationReport evaluate(const Model& model, const std::filesystem::path& root,
                          const std::vector<ManifestEntry>& entries, std::size_t workers = 0);

// Aligned table with class codes on both axes plus row and column totals.
std::string render_confusion(const ConfusionMatrix& matrix, const LabelTable& labels);

nlohmann::ordered_json report_to_json(const EvaluationReport& report, const LabelTable& labels);

}  // namespace birr
