#include "birr/model.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace birr {

namespace k = kernels;

namespace {

struct BlockSpec {
  std::size_t filters;
  std::size_t stride;
};

// Pointwise width and depthwise stride of the 13 separable blocks. The last
// block keeps stride 1: its input is already at the final 1/32 resolution.
constexpr std::array<BlockSpec, 13> kBlocks{{{64, 1},
                                             {128, 2},
                                             {128, 1},
                                             {256, 2},
                                             {256, 1},
                                             {512, 2},
                                             {512, 1},
                                             {512, 1},
                                             {512, 1},
                                             {512, 1},
                                             {512, 1},
                                             {1024, 2},
                                             {1024, 1}}};

constexpr std::size_t kStemFilters = 32;

template <typename T>
TensorT<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  TensorT<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(uniform(rng, -limit, limit));
  return t;
}

template <typename T>
class Builder {
 public:
  Builder(const ModelConfig& config, Rng& rng) : config_(config), rng_(rng) {}

  void conv(const std::string& name, std::size_t in, std::size_t out, std::size_t size,
            std::size_t stride) {
    LayerT<T> layer;
    layer.name = name;
    layer.kind = LayerKind::kConv;
    layer.conv.kernel = he_uniform<T>(Shape{size, size, in, out}, size * size * in, rng_);
    layer.conv.stride = stride;
    layer.conv.padding = k::Padding::kSame;
    push(std::move(layer));
  }

  void depthwise(const std::string& name, std::size_t channels, std::size_t stride) {
    LayerT<T> layer;
    layer.name = name;
    layer.kind = LayerKind::kDepthwiseConv;
    layer.conv.kernel = he_uniform<T>(Shape{3, 3, channels, 1}, 9, rng_);
    layer.conv.stride = stride;
    layer.conv.padding = k::Padding::kSame;
    push(std::move(layer));
  }

  void bn_relu(const std::string& prefix, std::size_t channels) {
    LayerT<T> bn;
    bn.name = prefix + "_bn";
    bn.kind = LayerKind::kBatchNorm;
    bn.bn = k::BatchNormState<T>::identity(channels, config_.bn_momentum, config_.bn_epsilon);
    push(std::move(bn));
    LayerT<T> relu;
    relu.name = prefix + "_relu";
    relu.kind = LayerKind::kReLU6;
    push(std::move(relu));
  }

  void head(std::size_t features) {
    LayerT<T> pool;
    pool.name = "global_pool";
    pool.kind = LayerKind::kGlobalPool;
    pool.pooling = config_.head_pooling;
    pool.head = true;
    push(std::move(pool));

    LayerT<T> drop;
    drop.name = "dropout";
    drop.kind = LayerKind::kDropout;
    drop.dropout_rate = config_.dropout_rate;
    drop.head = true;
    push(std::move(drop));

    const std::size_t in = config_.head_pooling == HeadPooling::kAvgConcatMax ? 2 * features
                                                                               : features;
    const auto classes = static_cast<std::size_t>(config_.num_classes);
    LayerT<T> logits;
    logits.name = "predictions";
    logits.kind = LayerKind::kDense;
    logits.weights = he_uniform<T>(Shape{1, 1, in, classes}, in, rng_);
    logits.bias = TensorT<T>::vector(classes);
    logits.head = true;
    push(std::move(logits));
  }

  ModelT<T> finish() { return ModelT<T>{config_, std::move(layers_)}; }

 private:
  void push(LayerT<T> layer) { layers_.push_back(std::move(layer)); }

  const ModelConfig& config_;
  Rng& rng_;
  std::vector<LayerT<T>> layers_;
};

template <typename T>
void check_input(const ModelConfig& config, const TensorT<T>& batch) {
  const Shape& s = batch.shape();
  const auto res = static_cast<std::size_t>(config.input_resolution);
  if (s.h != res || s.w != res || s.c != 3 || s.n == 0) {
    throw DimensionError("model expects input N x " + std::to_string(res) + " x " +
                         std::to_string(res) + " x 3, got " + s.str());
  }
}

template <typename T>
TensorT<T> pool_forward(const LayerT<T>& layer, const TensorT<T>& x) {
  switch (layer.pooling) {
    case HeadPooling::kAvg: return k::global_avg_pool(x);
    case HeadPooling::kMax: return k::global_max_pool(x);
    case HeadPooling::kAvgConcatMax: return k::global_avg_max_pool(x);
  }
  throw UsageError("unknown pooling");
}

template <typename T>
TensorT<T> pool_backward(const LayerT<T>& layer, const TensorT<T>& x, const TensorT<T>& g) {
  switch (layer.pooling) {
    case HeadPooling::kAvg: return k::global_avg_pool_backward(x, g);
    case HeadPooling::kMax: return k::global_max_pool_backward(x, g);
    case HeadPooling::kAvgConcatMax: return k::global_avg_max_pool_backward(x, g);
  }
  throw UsageError("unknown pooling");
}

// Shared by the mutable (train-capable) and const (infer) forward entry
// points. `mutable_model` is null for the const path.
template <typename T>
ForwardResult<T> run_forward(const ModelT<T>& model, ModelT<T>* mutable_model,
                             const TensorT<T>& batch, Mode mode, Rng* rng, ForwardTape<T>* tape) {
  check_input(model.config, batch);
  const std::size_t count = model.layers.size();
  if (tape) {
    tape->inputs.assign(count, {});
    tape->dropout_masks.assign(count, {});
    tape->bn_modes.assign(count, Mode::kInfer);
  }
  TensorT<T> x = batch;
  for (std::size_t i = 0; i < count; ++i) {
    const LayerT<T>& layer = model.layers[i];
    TensorT<T> y;
    switch (layer.kind) {
      case LayerKind::kConv:
        y = k::conv2d(x, layer.conv);
        break;
      case LayerKind::kDepthwiseConv:
        y = k::depthwise_conv2d(x, layer.conv);
        break;
      case LayerKind::kBatchNorm: {
        const bool batch_stats = mode == Mode::kTrain && layer.trainable && mutable_model;
        if (batch_stats) {
          y = k::batchnorm(x, mutable_model->layers[i].bn, Mode::kTrain);
        } else {
          y = k::batchnorm(x, layer.bn);
        }
        if (tape) tape->bn_modes[i] = batch_stats ? Mode::kTrain : Mode::kInfer;
        break;
      }
      case LayerKind::kReLU6:
        y = k::relu6(x);
        break;
      case LayerKind::kGlobalPool:
        y = pool_forward(layer, x);
        break;
      case LayerKind::kDropout:
        if (mode == Mode::kTrain && rng) {
          y = k::dropout(x, layer.dropout_rate, Mode::kTrain, *rng,
                         tape ? &tape->dropout_masks[i] : nullptr);
        } else {
          y = x;
          if (tape) tape->dropout_masks[i] = TensorT<T>(x.shape(), T(1));
        }
        break;
      case LayerKind::kDense:
        y = k::dense(x, layer.weights, layer.bias);
        break;
    }
    if (tape) {
      tape->inputs[i] = std::move(x);
    }
    x = std::move(y);
  }
  ForwardResult<T> result{x, k::softmax(x)};
  if (tape) tape->output = result;
  return result;
}

}  // namespace

std::string to_string(HeadPooling pooling) {
  switch (pooling) {
    case HeadPooling::kAvg: return "avg";
    case HeadPooling::kMax: return "max";
    case HeadPooling::kAvgConcatMax: return "avg_concat_max";
  }
  return "?";
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDepthwiseConv: return "depthwise_conv";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kReLU6: return "relu6";
    case LayerKind::kGlobalPool: return "global_pool";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kDense: return "dense";
  }
  return "?";
}

std::string to_string(FreezePolicy policy) {
  return policy == FreezePolicy::kFreezeBackbone ? "freeze_backbone" : "unfreeze_all";
}

HeadPooling parse_head_pooling(const std::string& text) {
  for (auto p : {HeadPooling::kAvg, HeadPooling::kMax, HeadPooling::kAvgConcatMax}) {
    if (to_string(p) == text) return p;
  }
  throw ConfigError("unknown head pooling '" + text + "'");
}

LayerKind parse_layer_kind(const std::string& text) {
  for (auto kind : {LayerKind::kConv, LayerKind::kDepthwiseConv, LayerKind::kBatchNorm,
                    LayerKind::kReLU6, LayerKind::kGlobalPool, LayerKind::kDropout,
                    LayerKind::kDense}) {
    if (to_string(kind) == text) return kind;
  }
  throw ConfigError("unknown layer kind '" + text + "'");
}

FreezePolicy parse_freeze_policy(const std::string& text) {
  if (text == "freeze_backbone") return FreezePolicy::kFreezeBackbone;
  if (text == "unfreeze_all") return FreezePolicy::kUnfreezeAll;
  throw ConfigError("unknown freeze policy '" + text + "'");
}

void ModelConfig::validate() const {
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw ConfigError("width_multiplier must lie in (0, 1], got " +
                      std::to_string(width_multiplier));
  }
  if (input_resolution < 32 || input_resolution % 2 != 0) {
    throw ConfigError("input_resolution " + std::to_string(input_resolution) +
                      " is too small for the stride schedule (need an even value >= 32)");
  }
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must lie in (0, 1)");
  if (!(bn_epsilon > 0.0)) throw ConfigError("bn_epsilon must be positive");
}

std::size_t ModelConfig::scaled_channels(std::size_t base) const {
  const auto scaled = static_cast<long long>(std::llround(static_cast<double>(base) * width_multiplier));
  return static_cast<std::size_t>(std::max(1LL, scaled));
}

Shape backbone_output_shape(const ModelConfig& config, std::size_t batch) {
  config.validate();
  auto side = static_cast<std::size_t>(config.input_resolution);
  side = (side + 1) / 2;
  for (const auto& block : kBlocks) side = (side + block.stride - 1) / block.stride;
  return Shape{batch, side, side, config.scaled_channels(kBlocks.back().filters)};
}

template <typename T>
template <typename U>
LayerT<U> LayerT<T>::cast() const {
  LayerT<U> out;
  out.name = name;
  out.kind = kind;
  out.head = head;
  out.trainable = trainable;
  out.conv.kernel = conv.kernel.template cast<U>();
  out.conv.stride = conv.stride;
  out.conv.padding = conv.padding;
  out.bn = bn.template cast<U>();
  out.weights = weights.template cast<U>();
  out.bias = bias.template cast<U>();
  out.pooling = pooling;
  out.dropout_rate = dropout_rate;
  return out;
}

template <typename T>
template <typename U>
ModelT<U> ModelT<T>::cast() const {
  ModelT<U> out{config, {}};
  out.layers.reserve(layers.size());
  for (const auto& l : layers) out.layers.push_back(l.template cast<U>());
  return out;
}

template <typename T>
std::size_t ModelT<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& view : parameter_views(*this)) total += view.values.size();
  return total;
}

namespace {

template <typename Model, typename View>
std::vector<View> collect_views(Model& model) {
  std::vector<View> views;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    auto add = [&](const char* suffix, Shape shape, auto& storage, bool learnable) {
      views.push_back(View{layer.name + "/" + suffix, i, shape,
                           {storage.data(), storage.size()}, learnable});
    };
    switch (layer.kind) {
      case LayerKind::kConv:
      case LayerKind::kDepthwiseConv:
        add("kernel", layer.conv.kernel.shape(), layer.conv.kernel, true);
        break;
      case LayerKind::kBatchNorm: {
        const Shape v{1, 1, 1, layer.bn.channels()};
        add("gamma", v, layer.bn.gamma, true);
        add("beta", v, layer.bn.beta, true);
        add("running_mean", v, layer.bn.running_mean, false);
        add("running_var", v, layer.bn.running_var, false);
        break;
      }
      case LayerKind::kDense:
        add("kernel", layer.weights.shape(), layer.weights, true);
        add("bias", layer.bias.shape(), layer.bias, true);
        break;
      default:
        break;
    }
  }
  return views;
}

}  // namespace

template <typename T>
std::vector<ParameterView<T>> parameter_views(ModelT<T>& model) {
  return collect_views<ModelT<T>, ParameterView<T>>(model);
}

template <typename T>
std::vector<ParameterView<const T>> parameter_views(const ModelT<T>& model) {
  return collect_views<const ModelT<T>, ParameterView<const T>>(model);
}

template <typename T>
ModelT<T> build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  Builder<T> b(config, rng);
  std::size_t channels = config.scaled_channels(kStemFilters);
  b.conv("conv1", 3, channels, 3, 2);
  b.bn_relu("conv1", channels);
  for (std::size_t i = 0; i < kBlocks.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    const std::size_t out = config.scaled_channels(kBlocks[i].filters);
    b.depthwise("conv_dw_" + id, channels, kBlocks[i].stride);
    b.bn_relu("conv_dw_" + id, channels);
    b.conv("conv_pw_" + id, channels, out, 1, 1);
    b.bn_relu("conv_pw_" + id, out);
    channels = out;
  }
  b.head(channels);
  return b.finish();
}

template <typename T>
ForwardResult<T> forward(ModelT<T>& model, const TensorT<T>& batch, Mode mode, Rng& rng,
                         ForwardTape<T>* tape) {
  return run_forward(model, &model, batch, mode, &rng, tape);
}

template <typename T>
ForwardResult<T> forward(const ModelT<T>& model, const TensorT<T>& batch) {
  return run_forward<T>(model, nullptr, batch, Mode::kInfer, nullptr, nullptr);
}

template <typename T>
Gradients<T> backward(const ModelT<T>& model, const ForwardTape<T>& tape,
                      const TensorT<T>& grad_logits) {
  const std::size_t count = model.layers.size();
  if (!tape.recorded() || tape.inputs.size() != count) {
    throw UsageError("backward: no recorded forward pass for this model");
  }
  if (grad_logits.shape() != tape.output.logits.shape()) {
    throw DimensionError("backward: gradient shape " + grad_logits.shape().str() +
                         " does not match logits " + tape.output.logits.shape().str());
  }

  const auto views = parameter_views(model);
  Gradients<T> grads;
  grads.values.resize(views.size());
  // Index of the first view owned by each layer.
  std::vector<std::size_t> first_view(count, views.size());
  for (std::size_t v = views.size(); v-- > 0;) first_view[views[v].layer] = v;

  std::size_t lowest = count;
  for (std::size_t i = 0; i < count; ++i) {
    if (model.layers[i].trainable && model.layers[i].has_parameters()) {
      lowest = i;
      break;
    }
  }

  TensorT<T> g = grad_logits;
  for (std::size_t i = count; i-- > lowest;) {
    const LayerT<T>& layer = model.layers[i];
    const TensorT<T>& x = tape.inputs[i];
    const bool keep = layer.trainable;
    const std::size_t v = first_view[i];
    TensorT<T> gin;
    switch (layer.kind) {
      case LayerKind::kConv: {
        auto r = k::conv2d_backward(x, layer.conv, g);
        if (keep) grads.values[v].assign(r.kernel.values().begin(), r.kernel.values().end());
        gin = std::move(r.input);
        break;
      }
      case LayerKind::kDepthwiseConv: {
        auto r = k::depthwise_conv2d_backward(x, layer.conv, g);
        if (keep) grads.values[v].assign(r.kernel.values().begin(), r.kernel.values().end());
        gin = std::move(r.input);
        break;
      }
      case LayerKind::kBatchNorm: {
        auto r = k::batchnorm_backward(x, layer.bn, tape.bn_modes[i], g);
        if (keep) {
          grads.values[v] = std::move(r.gamma);
          grads.values[v + 1] = std::move(r.beta);
        }
        gin = std::move(r.input);
        break;
      }
      case LayerKind::kReLU6:
        gin = k::relu6_backward(x, g);
        break;
      case LayerKind::kGlobalPool:
        gin = pool_backward(layer, x, g);
        break;
      case LayerKind::kDropout:
        gin = k::dropout_backward(tape.dropout_masks[i], g);
        break;
      case LayerKind::kDense: {
        auto r = k::dense_backward(x, layer.weights, g);
        if (keep) {
          grads.values[v].assign(r.weights.values().begin(), r.weights.values().end());
          grads.values[v + 1].assign(r.bias.values().begin(), r.bias.values().end());
        }
        gin = std::move(r.input);
        break;
      }
    }
    g = std::move(gin);
  }
  return grads;
}

template <typename T>
void set_trainable(ModelT<T>& model, FreezePolicy policy) {
  for (auto& layer : model.layers) {
    layer.trainable = policy == FreezePolicy::kUnfreezeAll || layer.head;
  }
}

template <typename T>
void set_trainable(ModelT<T>& model, const std::vector<bool>& mask) {
  if (mask.size() != model.layers.size()) {
    throw ConfigError("trainable mask has " + std::to_string(mask.size()) +
                      " entries, model has " + std::to_string(model.layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < mask.size(); ++i) model.layers[i].trainable = mask[i];
}

#define BIRR_INSTANTIATE_MODEL(T)                                                          \
  template struct LayerT<T>;                                                               \
  template struct ModelT<T>;                                                               \
  template std::vector<ParameterView<T>> parameter_views(ModelT<T>&);                      \
  template std::vector<ParameterView<const T>> parameter_views(const ModelT<T>&);          \
  template ModelT<T> build_model<T>(const ModelConfig&, Rng&);                             \
  template ForwardResult<T> forward(ModelT<T>&, const TensorT<T>&, Mode, Rng&,             \
                                    ForwardTape<T>*);                                      \
  template ForwardResult<T> forward(const ModelT<T>&, const TensorT<T>&);                  \
  template Gradients<T> backward(const ModelT<T>&, const ForwardTape<T>&, const TensorT<T>&); \
  template void set_trainable(ModelT<T>&, FreezePolicy);                                   \
  template void set_trainable(ModelT<T>&, const std::vector<bool>&);

BIRR_INSTANTIATE_MODEL(float)
BIRR_INSTANTIATE_MODEL(double)

template LayerT<double> LayerT<float>::cast<double>() const;
template LayerT<float> LayerT<double>::cast<float>() const;
template ModelT<double> ModelT<float>::cast<double>() const;
template ModelT<float> ModelT<double>::cast<float>() const;

#undef BIRR_INSTANTIATE_MODEL

}  // namespace birr
