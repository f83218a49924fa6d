#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "birr/augment.hpp"
#include "birr/data.hpp"
#include "birr/model.hpp"

namespace birr {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 32;
  int epochs = 0;  // required
  FreezePolicy freeze_policy = FreezePolicy::kUnfreezeAll;
  AdamConfig adam;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  std::optional<std::filesystem::path> checkpoint_dir;  // one file per epoch
  std::size_t workers = 0;

  void validate() const;  // ConfigError

  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);  // "epochs" is mandatory
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double val_loss = 0;
  double val_accuracy = 0;
  double seconds = 0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0;

  // epoch,train_loss,train_acc,val_loss,val_acc
  std::string to_csv() const;
};

// Mean of -log(max(p[label], 1e-12)). Throws ConfigError for a label outside
// [0, C) and DimensionError when the label count differs from N.
template <typename T>
double cross_entropy(const TensorT<T>& probabilities, std::span<const int> labels);

// Gradient of cross_entropy(softmax(logits)) with respect to the logits:
// (p - onehot(label)) / N.
template <typename T>
TensorT<T> cross_entropy_logit_grad(const TensorT<T>& probabilities, std::span<const int> labels);

// One bias-corrected Adam update at step t >= 1, in place.
void adam_step(std::span<float> params, std::span<const float> grads, std::span<float> m,
               std::span<float> v, long t, double learning_rate, const AdamConfig& config);

// Adam over every trainable, learnable tensor of a model. Tensors whose
// gradient entry is empty (frozen layers, running statistics) are untouched.
class AdamOptimizer {
 public:
  AdamOptimizer(double learning_rate, AdamConfig config)
      : learning_rate_(learning_rate), config_(config) {}

  void step(Model& model, const Gradients<float>& grads);
  long steps() const { return t_; }

 private:
  double learning_rate_;
  AdamConfig config_;
  long t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct StepStats {
  double loss = 0;
  std::size_t correct = 0;
  std::size_t count = 0;
};

// Train-mode forward, loss, backward and one optimizer step on a batch.
// Throws DivergenceError(epoch, batch) when the loss is not finite.
StepStats train_step(Model& model, const Batch& batch, AdamOptimizer& optimizer, Rng& dropout_rng,
                     int epoch, int batch_index);

// Infer-mode loss and accuracy over every batch of a loader.
StepStats measure(const Model& model, const BatchLoader& loader);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Applies the freeze policy, then runs `epochs` passes over the train
// split with per-epoch validation. The model is updated in place.
RunHistory fit(Model& model, const SplitManifest& split, const TrainConfig& config,
               const EpochCallback& on_epoch = {});

}  // namespace birr
