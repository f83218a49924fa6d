#include "birr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "birr/errors.hpp"
#include "birr/weights_io.hpp"

namespace birr {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
  augment.validate();
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["freeze_policy"] = to_string(freeze_policy);
  j["adam"] = {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"epsilon", adam.epsilon}};
  j["seed"] = seed;
  j["augment"] = augment.to_json();
  if (checkpoint_dir) j["checkpoint_dir"] = checkpoint_dir->string();
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<int>();
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("freeze_policy")) c.freeze_policy = parse_freeze_policy(j["freeze_policy"]);
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("augment")) c.augment = AugmentConfig::from_json(j["augment"]);
    if (j.contains("checkpoint_dir")) c.checkpoint_dir = j["checkpoint_dir"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string RunHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  char line[160];
  for (const auto& r : epochs) {
    std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss,
                  r.train_accuracy, r.val_loss, r.val_accuracy);
    os << line;
  }
  return os.str();
}

namespace {

template <typename T>
void check_labels(const TensorT<T>& p, std::span<const int> labels) {
  if (labels.size() != p.shape().n) {
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for a batch of " +
                         std::to_string(p.shape().n));
  }
  const auto classes = static_cast<int>(p.shape().c);
  for (int y : labels) {
    if (y < 0 || y >= classes) {
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

std::size_t argmax_row(const Tensor& p, std::size_t n) {
  const std::size_t c = p.shape().c;
  std::size_t best = 0;
  for (std::size_t j = 1; j < c; ++j)
    if (p[n * c + j] > p[n * c + best]) best = j;
  return best;
}

}  // namespace

template <typename T>
double cross_entropy(const TensorT<T>& probabilities, std::span<const int> labels) {
  check_labels(probabilities, labels);
  const std::size_t c = probabilities.shape().c;
  double sum = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const double p = static_cast<double>(probabilities[n * c + static_cast<std::size_t>(labels[n])]);
    sum -= std::log(std::max(p, 1e-12));
  }
  return labels.empty() ? 0.0 : sum / static_cast<double>(labels.size());
}

template <typename T>
TensorT<T> cross_entropy_logit_grad(const TensorT<T>& probabilities, std::span<const int> labels) {
  check_labels(probabilities, labels);
  const std::size_t c = probabilities.shape().c;
  const T scale = T(1) / static_cast<T>(labels.size());
  TensorT<T> g = probabilities;
  for (std::size_t n = 0; n < labels.size(); ++n) g[n * c + static_cast<std::size_t>(labels[n])] -= T(1);
  for (auto& v : g.values()) v *= scale;
  return g;
}

template double cross_entropy(const TensorT<float>&, std::span<const int>);
template double cross_entropy(const TensorT<double>&, std::span<const int>);
template TensorT<float> cross_entropy_logit_grad(const TensorT<float>&, std::span<const int>);
template TensorT<double> cross_entropy_logit_grad(const TensorT<double>&, std::span<const int>);

void adam_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
               std::span<float> v, long t, double learning_rate, const AdamConfig& config) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment lengths differ");
  }
  if (t < 1) throw UsageError("adam_step: step count must start at 1");
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double step = learning_rate * (mi / c1) / (std::sqrt(vi / c2) + config.epsilon);
    params[i] = static_cast<float>(params[i] - step);
  }
}

void AdamOptimizer::step(Model& model, const Gradients<float>& grads) {
  auto views = parameter_views(model);
  if (grads.values.size() != views.size()) throw DimensionError("gradient list does not match model");
  if (m_.empty()) {
    m_.resize(views.size());
    v_.resize(views.size());
  }
  ++t_;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& g = grads.values[i];
    if (g.empty() || !views[i].learnable) continue;
    if (m_[i].empty()) {
      m_[i].assign(g.size(), 0.0f);
      v_[i].assign(g.size(), 0.0f);
    }
    adam_step(views[i].values, g, m_[i], v_[i], t_, learning_rate_, config_);
  }
}

StepStats train_step(Model& model, const Batch& batch, AdamOptimizer& optimizer, Rng& dropout_rng,
                     int epoch, int batch_index) {
  ForwardTape<float> tape;
  const auto out = forward(model, batch.images, Mode::kTrain, dropout_rng, &tape);
  StepStats stats;
  stats.count = batch.labels.size();
  stats.loss = cross_entropy(out.probabilities, batch.labels);
  if (!std::isfinite(stats.loss)) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "training diverged: loss is %f at epoch %d, batch %d", stats.loss,
                  epoch, batch_index);
    throw DivergenceError(epoch, batch_index, msg);
  }
  for (std::size_t n = 0; n < stats.count; ++n) {
    stats.correct += static_cast<int>(argmax_row(out.probabilities, n)) == batch.labels[n];
  }
  const auto grads = backward(model, tape, cross_entropy_logit_grad(out.probabilities, batch.labels));
  optimizer.step(model, grads);
  return stats;
}

StepStats measure(const Model& model, const BatchLoader& loader) {
  StepStats total;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < loader.batches_per_epoch(); ++b) {
    const Batch batch = loader.batch(0, b);
    const auto out = forward(model, batch.images);
    loss_sum += cross_entropy(out.probabilities, batch.labels) * static_cast<double>(batch.labels.size());
    for (std::size_t n = 0; n < batch.labels.size(); ++n) {
      total.correct += static_cast<int>(argmax_row(out.probabilities, n)) == batch.labels[n];
    }
    total.count += batch.labels.size();
  }
  total.loss = total.count ? loss_sum / static_cast<double>(total.count) : 0.0;
  return total;
}

RunHistory fit(Model& model, const SplitManifest& split, const TrainConfig& config,
               const EpochCallback& on_epoch) {
  config.validate();
  if (split[Split::kTrain].empty()) throw DataError("the train split is empty");
  set_trainable(model, config.freeze_policy);

  const int resolution = model.config.input_resolution;
  BatchLoader train(split.root, split[Split::kTrain], Split::kTrain,
                    {config.batch_size, resolution, derive_seed(config.seed, 1), true,
                     config.augment, config.workers});
  AugmentConfig off;
  off.enabled = false;
  BatchLoader val(split.root, split[Split::kVal], Split::kVal,
                  {config.batch_size, resolution, 0, false, off, config.workers});

  AdamOptimizer optimizer(config.learning_rate, config.adam);
  Rng dropout_rng(derive_seed(config.seed, 2));
  RunHistory history;
  const auto run_start = std::chrono::steady_clock::now();
  if (config.checkpoint_dir) std::filesystem::create_directories(*config.checkpoint_dir);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    std::size_t correct = 0, count = 0;
    for (std::size_t b = 0; b < train.batches_per_epoch(); ++b) {
      const Batch batch = train.batch(static_cast<std::size_t>(epoch - 1), b);
      const auto s = train_step(model, batch, optimizer, dropout_rng, epoch, static_cast<int>(b));
      loss_sum += s.loss * static_cast<double>(s.count);
      correct += s.correct;
      count += s.count;
    }
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = loss_sum / static_cast<double>(count);
    r.train_accuracy = static_cast<double>(correct) / static_cast<double>(count);
    if (val.size() > 0) {
      const auto v = measure(model, val);
      r.val_loss = v.loss;
      r.val_accuracy = static_cast<double>(v.correct) / static_cast<double>(v.count);
    } else {
      r.val_loss = r.val_accuracy = std::nan("");
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (config.checkpoint_dir) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.weights", epoch);
      save_weights(model, *config.checkpoint_dir / name);
    }
    history.epochs.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  history.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  return history;
}

}  // namespace birr
