#pragma once

#include <cstddef>
#include <vector>

#include "birr/random.hpp"
#include "birr/tensor.hpp"

// Forward and backward numeric primitives for the network layers. All kernels
// take NHWC tensors and are pure functions of their arguments, except
// batchnorm in train mode (updates running statistics) and dropout in train
// mode (consumes the RNG stream).
namespace birr::kernels {

enum class Padding { kSame, kValid };
enum class Mode { kTrain, kInfer };

// Output extent and leading padding for one spatial axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

// "same": out = ceil(in / stride), total padding split floor(p/2) before and
// the rest after. "valid": out = (in - k) / stride + 1.
AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride,
                           Padding padding);

template <typename T>
struct ConvParams {
  // (kh, kw, in_ch, out_ch) for conv2d, (kh, kw, ch, 1) for depthwise.
  TensorT<T> kernel;
  std::size_t stride = 1;
  Padding padding = Padding::kSame;
};

template <typename T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.01;
  double epsilon = 1e-3;

  static BatchNormState identity(std::size_t channels, double momentum = 0.01,
                                 double epsilon = 1e-3) {
    return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)),
            std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1)),
            momentum, epsilon};
  }
  std::size_t channels() const { return gamma.size(); }

  template <typename U>
  BatchNormState<U> cast() const {
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    return {conv(gamma), conv(beta), conv(running_mean), conv(running_var), momentum, epsilon};
  }
};

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvParams<T>& params);

template <typename T>
TensorT<T> depthwise_conv2d(const TensorT<T>& input, const ConvParams<T>& params);

// Train mode normalizes with biased batch moments over (N, H, W) and folds
// them into the running statistics; infer mode uses the running statistics.
template <typename T>
TensorT<T> batchnorm(const TensorT<T>& input, BatchNormState<T>& state, Mode mode);

// Infer-mode batchnorm over an immutable state.
template <typename T>
TensorT<T> batchnorm(const TensorT<T>& input, const BatchNormState<T>& state);

template <typename T>
TensorT<T> relu6(const TensorT<T>& input);

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& input);

template <typename T>
TensorT<T> global_max_pool(const TensorT<T>& input);

// Channels [0, C) hold the average, [C, 2C) the maximum.
template <typename T>
TensorT<T> global_avg_max_pool(const TensorT<T>& input);

// input N x 1 x 1 x Cin, weights (1, 1, Cin, Cout), bias (1, 1, 1, Cout).
template <typename T>
TensorT<T> dense(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias);

// Normalizes over the channel axis of every (n, h, w) position.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits);

// Inverted dropout. In train mode `mask`, when given, receives the per-element
// multiplier (0 or 1 / (1 - rate)) needed by dropout_backward.
template <typename T>
TensorT<T> dropout(const TensorT<T>& input, double rate, Mode mode, Rng& rng,
                   TensorT<T>* mask = nullptr);

// --- backward ---------------------------------------------------------------

template <typename T>
struct ConvGrads {
  TensorT<T> input;
  TensorT<T> kernel;
};

template <typename T>
struct BatchNormGrads {
  TensorT<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

template <typename T>
struct DenseGrads {
  TensorT<T> input;
  TensorT<T> weights;
  TensorT<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const ConvParams<T>& params,
                             const TensorT<T>& grad_out);

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const TensorT<T>& input, const ConvParams<T>& params,
                                       const TensorT<T>& grad_out);

// `mode` must be the mode the forward pass used; train mode recomputes the
// batch moments from `input`.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const TensorT<T>& input, const BatchNormState<T>& state,
                                     Mode mode, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> relu6_backward(const TensorT<T>& input, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& input, const TensorT<T>& grad_out);

// Gradient goes to the first maximal position of each channel.
template <typename T>
TensorT<T> global_max_pool_backward(const TensorT<T>& input, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> global_avg_max_pool_backward(const TensorT<T>& input, const TensorT<T>& grad_out);

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& grad_out);

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& probabilities, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& mask, const TensorT<T>& grad_out);

}  // namespace birr::kernels
