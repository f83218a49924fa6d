#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "birr/kernels.hpp"
#include "birr/random.hpp"
#include "birr/tensor.hpp"

namespace birr {

using kernels::Mode;

enum class HeadPooling { kAvg, kMax, kAvgConcatMax };

enum class LayerKind { kConv, kDepthwiseConv, kBatchNorm, kReLU6, kGlobalPool, kDropout, kDense };

enum class FreezePolicy { kFreezeBackbone, kUnfreezeAll };

std::string to_string(HeadPooling pooling);
std::string to_string(LayerKind kind);
std::string to_string(FreezePolicy policy);
HeadPooling parse_head_pooling(const std::string& text);
LayerKind parse_layer_kind(const std::string& text);
FreezePolicy parse_freeze_policy(const std::string& text);

struct ModelConfig {
  double width_multiplier = 1.0;
  int input_resolution = 224;
  int num_classes = 6;
  HeadPooling head_pooling = HeadPooling::kAvg;
  double dropout_rate = 0.2;
  double bn_momentum = 0.01;
  double bn_epsilon = 1e-3;

  // Throws ConfigError. The resolution must be even and at least 32 so that
  // the five stride-2 stages leave a non-empty feature map.
  void validate() const;

  // round(base * width_multiplier), at least 1.
  std::size_t scaled_channels(std::size_t base) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One entry of the ordered layer list. Only the members relevant to `kind`
// are populated.
template <typename T>
struct LayerT {
  std::string name;
  LayerKind kind = LayerKind::kReLU6;
  bool head = false;
  bool trainable = true;

  kernels::ConvParams<T> conv;     // kConv, kDepthwiseConv
  kernels::BatchNormState<T> bn;   // kBatchNorm
  TensorT<T> weights;              // kDense: (1, 1, in, out)
  TensorT<T> bias;                 // kDense: (1, 1, 1, out)
  HeadPooling pooling = HeadPooling::kAvg;  // kGlobalPool
  double dropout_rate = 0.0;       // kDropout

  bool has_parameters() const {
    return kind == LayerKind::kConv || kind == LayerKind::kDepthwiseConv ||
           kind == LayerKind::kBatchNorm || kind == LayerKind::kDense;
  }

  template <typename U>
  LayerT<U> cast() const;
};

template <typename T>
struct ModelT {
  ModelConfig config;
  std::vector<LayerT<T>> layers;

  std::size_t parameter_count() const;

  template <typename U>
  ModelT<U> cast() const;
};

using Layer = LayerT<float>;
using Model = ModelT<float>;

// A named view of one stored tensor. Running statistics are not learnable.
template <typename T>
struct ParameterView {
  std::string name;
  std::size_t layer = 0;
  Shape shape;
  std::span<T> values;
  bool learnable = true;
};

// Every stored tensor in layer order: conv kernels, BN gamma/beta/running
// mean/running variance, dense kernel/bias.
template <typename T>
std::vector<ParameterView<T>> parameter_views(ModelT<T>& model);
template <typename T>
std::vector<ParameterView<const T>> parameter_views(const ModelT<T>& model);

// Backbone: 3x3 stride-2 conv, then 13 depthwise-separable blocks, each
// conv followed by batchnorm and ReLU6. Head: global pooling, dropout,
// dense logits. He-uniform weights, BN gamma = 1 and beta = 0.
template <typename T = float>
ModelT<T> build_model(const ModelConfig& config, Rng& rng);

// Feature map shape entering the head.
Shape backbone_output_shape(const ModelConfig& config, std::size_t batch);

template <typename T>
struct ForwardResult {
  TensorT<T> logits;
  TensorT<T> probabilities;
};

// Intermediate state recorded by a forward pass for use by backward().
template <typename T>
struct ForwardTape {
  std::vector<TensorT<T>> inputs;         // input of every layer
  std::vector<TensorT<T>> dropout_masks;  // per layer; empty unless dropout
  std::vector<Mode> bn_modes;             // per layer; mode used by batchnorm
  ForwardResult<T> output;

  bool recorded() const { return !inputs.empty(); }
};

// Train mode uses batch statistics (and updates running statistics) in
// trainable batchnorm layers; frozen batchnorm layers always run on their
// running statistics. Dropout is active in train mode only.
template <typename T>
ForwardResult<T> forward(ModelT<T>& model, const TensorT<T>& batch, Mode mode, Rng& rng,
                         ForwardTape<T>* tape = nullptr);

// Infer-mode forward over an immutable model.
template <typename T>
ForwardResult<T> forward(const ModelT<T>& model, const TensorT<T>& batch);

// Gradients aligned with parameter_views(model). Entries for running
// statistics and for frozen layers are empty.
template <typename T>
struct Gradients {
  std::vector<std::vector<T>> values;
};

// Backpropagates d(loss)/d(logits) through the recorded pass. Layers below
// the lowest trainable layer are skipped entirely.
template <typename T>
Gradients<T> backward(const ModelT<T>& model, const ForwardTape<T>& tape,
                      const TensorT<T>& grad_logits);

// freeze_backbone marks only head layers trainable; unfreeze_all marks
// every layer trainable.
template <typename T>
void set_trainable(ModelT<T>& model, FreezePolicy policy);

// Explicit per-layer mask; its length must equal the layer count.
template <typename T>
void set_trainable(ModelT<T>& model, const std::vector<bool>& mask);

}  // namespace birr
