#include "birr/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>

#include "birr/errors.hpp"
#include "birr/image.hpp"

namespace birr {

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::size_t count) {
  if (truth >= classes_ || predicted >= classes_) {
    throw ConfigError("confusion matrix index out of range");
  }
  counts_[truth * classes_ + predicted] += count;
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, i);
  return t;
}

std::size_t ConfusionMatrix::row_total(std::size_t truth) const {
  std::size_t t = 0;
  for (std::size_t j = 0; j < classes_; ++j) t += at(truth, j);
  return t;
}

std::size_t ConfusionMatrix::column_total(std::size_t predicted) const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, predicted);
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ConfigError("confusion matrices differ in size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

Metrics compute_metrics(const ConfusionMatrix& m) {
  const std::size_t total = m.total();
  if (total == 0) throw DataError("cannot compute metrics of an empty evaluation");
  Metrics out;
  out.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);
  for (std::size_t k = 0; k < m.classes(); ++k) {
    const auto col = m.column_total(k);
    const auto row = m.row_total(k);
    out.precision.push_back(col ? static_cast<double>(m.at(k, k)) / static_cast<double>(col) : 0.0);
    out.recall.push_back(row ? static_cast<double>(m.at(k, k)) / static_cast<double>(row) : 0.0);
  }
  return out;
}

EvaluationReport evaluate(const Model& model, const std::filesystem::path& root,
                          const std::vector<ManifestEntry>& entries, std::size_t workers) {
  if (entries.empty()) throw DataError("nothing to evaluate: the entry list is empty");
  const auto classes = static_cast<std::size_t>(model.config.num_classes);
  const int resolution = model.config.input_resolution;
  std::vector<std::optional<std::size_t>> predicted(entries.size());
  std::vector<std::string> errors(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t i) {
    const auto path = root / entries[i].path;
    try {
      const Tensor x = preprocess(read_image(path), resolution);
      predicted[i] = argmax(forward(model, x).probabilities.values());
    } catch (const UnsupportedFormatError& e) {
      errors[i] = e.what();
    } catch (const DecodeError& e) {
      errors[i] = e.what();
    } catch (const IoError& e) {
      errors[i] = e.what();
    }
  });

  EvaluationReport report{{}, ConfusionMatrix(classes), {}, 0};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!predicted[i]) {
      report.failures.push_back({(root / entries[i].path).string(), errors[i]});
      continue;
    }
    report.matrix.add(static_cast<std::size_t>(entries[i].class_id), *predicted[i]);
    ++report.evaluated;
  }
  if (report.evaluated == 0) throw DataError("no entry could be evaluated");
  report.metrics = compute_metrics(report.matrix);
  return report;
}

std::string render_confusion(const ConfusionMatrix& m, const LabelTable& labels) {
  const std::size_t k = m.classes();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) {
    names.push_back(i < labels.size() ? labels.at(static_cast<int>(i)).code : std::to_string(i));
  }
  std::size_t width = std::string("total").size();
  for (const auto& n : names) width = std::max(width, n.size());
  width = std::max(width, std::to_string(m.total()).size());
  const std::size_t first = std::max(width, std::string("true\\pred").size());

  std::ostringstream os;
  auto cell = [&](const std::string& s, std::size_t w) { os << std::setw(static_cast<int>(w)) << s; };
  cell("true\\pred", first);
  for (const auto& n : names) {
    os << ' ';
    cell(n, width);
  }
  os << ' ';
  cell("total", width);
  os << '\n';
  for (std::size_t i = 0; i < k; ++i) {
    os << std::left;
    cell(names[i], first);
    os << std::right;
    for (std::size_t j = 0; j < k; ++j) {
      os << ' ';
      cell(std::to_string(m.at(i, j)), width);
    }
    os << ' ';
    cell(std::to_string(m.row_total(i)), width);
    os << '\n';
  }
  os << std::left;
  cell("total", first);
  os << std::right;
  for (std::size_t j = 0; j < k; ++j) {
    os << ' ';
    cell(std::to_string(m.column_total(j)), width);
  }
  os << ' ';
  cell(std::to_string(m.total()), width);
  os << '\n';
  return os.str();
}

nlohmann::ordered_json report_to_json(const EvaluationReport& r, const LabelTable& labels) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.metrics.accuracy;
  j["evaluated"] = r.evaluated;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.matrix.classes(); ++k) {
    per_class.push_back({{"code", labels.at(static_cast<int>(k)).code},
                         {"precision", r.metrics.precision[k]},
                         {"recall", r.metrics.recall[k]},
                         {"support", r.matrix.row_total(k)}});
  }
  j["per_class"] = per_class;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.matrix.classes(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < r.matrix.classes(); ++c) row.push_back(r.matrix.at(i, c));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  for (const auto& f : r.failures) failures.push_back({{"path", f.path}, {"error", f.error}});
  j["failures"] = failures;
  return j;
}

}  // namespace birr
