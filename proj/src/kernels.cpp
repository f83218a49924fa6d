#include "birr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace birr::kernels {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename T>
void require_cached(const TensorT<T>& t, const char* op) {
  if (t.empty()) {
    throw UsageError(std::string(op) + ": missing cached forward state");
  }
}

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": gradient shape " + b.shape().str() +
                                      " does not match forward shape " + a.shape().str());
}

struct ConvGeometry {
  AxisGeometry rows;
  AxisGeometry cols;
};

template <typename T>
ConvGeometry conv_geometry(const Shape& in, const ConvParams<T>& params, const char* op) {
  const Shape& k = params.kernel.shape();
  if (params.stride == 0) throw ConfigError(std::string(op) + ": stride must be positive");
  if (params.padding == Padding::kValid) {
    require(k.n <= in.h && k.h <= in.w,
            std::string(op) + ": kernel " + k.str() + " larger than input " + in.str());
  }
  return {axis_geometry(in.h, k.n, params.stride, params.padding),
          axis_geometry(in.w, k.h, params.stride, params.padding)};
}

// Input coordinate for output position `o` and kernel tap `k`, or -1 when
// the tap falls in the zero padding.
inline std::ptrdiff_t source_index(std::size_t o, std::size_t k, std::size_t stride,
                                   std::size_t pad, std::size_t extent) {
  const auto pos = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad);
  return (pos < 0 || pos >= static_cast<std::ptrdiff_t>(extent)) ? -1 : pos;
}

template <typename T>
std::vector<double> channel_mean(const TensorT<T>& x) {
  const std::size_t c = x.shape().c;
  const std::size_t m = x.size() / c;
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += row[ch];
  }
  for (auto& v : mean) v /= static_cast<double>(m);
  return mean;
}

template <typename T>
std::vector<double> channel_variance(const TensorT<T>& x, const std::vector<double>& mean) {
  const std::size_t c = x.shape().c;
  const std::size_t m = x.size() / c;
  std::vector<double> var(c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = x.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = row[ch] - mean[ch];
      var[ch] += d * d;
    }
  }
  for (auto& v : var) v /= static_cast<double>(m);
  return var;
}

template <typename T>
void check_bn_state(const TensorT<T>& input, const BatchNormState<T>& state) {
  const std::size_t c = input.shape().c;
  require(state.gamma.size() == c && state.beta.size() == c && state.running_mean.size() == c &&
              state.running_var.size() == c,
          "batchnorm: state has " + std::to_string(state.gamma.size()) +
              " channels, input " + input.shape().str());
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (!(state.running_var[ch] > T(0))) {
      throw StateError("batchnorm: non-positive running variance at channel " +
                       std::to_string(ch));
    }
  }
}

template <typename T>
TensorT<T> normalize_with(const TensorT<T>& input, const BatchNormState<T>& state,
                          const std::vector<double>& mean, const std::vector<double>& var) {
  const std::size_t c = input.shape().c;
  std::vector<double> scale(c);
  std::vector<double> shift(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    scale[ch] = state.gamma[ch] / std::sqrt(var[ch] + state.epsilon);
    shift[ch] = state.beta[ch] - mean[ch] * scale[ch];
  }
  TensorT<T> out(input.shape());
  const std::size_t m = input.size() / c;
  for (std::size_t i = 0; i < m; ++i) {
    const T* src = input.data() + i * c;
    T* dst = out.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      dst[ch] = static_cast<T>(src[ch] * scale[ch] + shift[ch]);
    }
  }
  return out;
}

template <typename T>
void require_pooled(const TensorT<T>& input, const TensorT<T>& grad_out, std::size_t channels,
                    const char* op) {
  const Shape& s = input.shape();
  require(grad_out.shape() == Shape{s.n, 1, 1, channels},
          std::string(op) + ": gradient shape " + grad_out.shape().str() +
              " does not match pooled shape of " + s.str());
}

}  // namespace

AxisGeometry axis_geometry(std::size_t in, std::size_t kernel, std::size_t stride,
                           Padding padding) {
  if (padding == Padding::kValid) {
    if (kernel > in) return {0, 0};
    return {(in - kernel) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t needed = (out == 0 ? 0 : (out - 1) * stride + kernel);
  const std::size_t total = needed > in ? needed - in : 0;
  return {out, total / 2};
}

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvParams<T>& params) {
  const Shape& in = input.shape();
  const Shape& k = params.kernel.shape();
  require(k.w == in.c, "conv2d: kernel " + k.str() + " expects " + std::to_string(k.w) +
                           " input channels, input is " + in.str());
  const ConvGeometry g = conv_geometry(in, params, "conv2d");
  const std::size_t cin = in.c;
  const std::size_t cout = k.c;
  TensorT<T> out(Shape{in.n, g.rows.out, g.cols.out, cout});

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oh = 0; oh < g.rows.out; ++oh) {
      for (std::size_t ow = 0; ow < g.cols.out; ++ow) {
        T* dst = out.ptr(n, oh, ow, 0);
        for (std::size_t kh = 0; kh < k.n; ++kh) {
          const auto ih = source_index(oh, kh, params.stride, g.rows.pad_before, in.h);
          if (ih < 0) continue;
          for (std::size_t kw = 0; kw < k.h; ++kw) {
            const auto iw = source_index(ow, kw, params.stride, g.cols.pad_before, in.w);
            if (iw < 0) continue;
            const T* src = input.ptr(n, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
            const T* taps = params.kernel.ptr(kh, kw, 0, 0);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T x = src[ci];
              const T* row = taps + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) dst[co] += x * row[co];
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> depthwise_conv2d(const TensorT<T>& input, const ConvParams<T>& params) {
  const Shape& in = input.shape();
  const Shape& k = params.kernel.shape();
  require(k.w == in.c && k.c == 1, "depthwise_conv2d: kernel " + k.str() +
                                       " does not match input channels of " + in.str());
  const ConvGeometry g = conv_geometry(in, params, "depthwise_conv2d");
  const std::size_t ch = in.c;
  TensorT<T> out(Shape{in.n, g.rows.out, g.cols.out, ch});

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oh = 0; oh < g.rows.out; ++oh) {
      for (std::size_t ow = 0; ow < g.cols.out; ++ow) {
        T* dst = out.ptr(n, oh, ow, 0);
        for (std::size_t kh = 0; kh < k.n; ++kh) {
          const auto ih = source_index(oh, kh, params.stride, g.rows.pad_before, in.h);
          if (ih < 0) continue;
          for (std::size_t kw = 0; kw < k.h; ++kw) {
            const auto iw = source_index(ow, kw, params.stride, g.cols.pad_before, in.w);
            if (iw < 0) continue;
            const T* src = input.ptr(n, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
            const T* taps = params.kernel.ptr(kh, kw, 0, 0);
            for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c] * taps[c];
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> batchnorm(const TensorT<T>& input, BatchNormState<T>& state, Mode mode) {
  if (mode == Mode::kInfer) return batchnorm(input, std::as_const(state));
  check_bn_state(input, state);
  const auto mean = channel_mean(input);
  const auto var = channel_variance(input, mean);
  TensorT<T> out = normalize_with(input, state, mean, var);
  const double m = state.momentum;
  for (std::size_t ch = 0; ch < state.channels(); ++ch) {
    state.running_mean[ch] = static_cast<T>((1.0 - m) * state.running_mean[ch] + m * mean[ch]);
    state.running_var[ch] = static_cast<T>((1.0 - m) * state.running_var[ch] + m * var[ch]);
  }
  return out;
}

template <typename T>
TensorT<T> batchnorm(const TensorT<T>& input, const BatchNormState<T>& state) {
  check_bn_state(input, state);
  const std::vector<double> mean(state.running_mean.begin(), state.running_mean.end());
  const std::vector<double> var(state.running_var.begin(), state.running_var.end());
  return normalize_with(input, state, mean, var);
}

template <typename T>
TensorT<T> relu6(const TensorT<T>& input) {
  TensorT<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = std::min(std::max(input[i], T(0)), T(6));
  }
  return out;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& input) {
  const Shape& s = input.shape();
  require(s.h >= 1 && s.w >= 1, "global_avg_pool: empty spatial extent in " + s.str());
  TensorT<T> out(Shape{s.n, 1, 1, s.c});
  const std::size_t area = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    std::vector<double> acc(s.c, 0.0);
    const T* src = input.ptr(n, 0, 0, 0);
    for (std::size_t p = 0; p < area; ++p) {
      for (std::size_t c = 0; c < s.c; ++c) acc[c] += src[p * s.c + c];
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      out.at(n, 0, 0, c) = static_cast<T>(acc[c] / static_cast<double>(area));
    }
  }
  return out;
}

template <typename T>
TensorT<T> global_max_pool(const TensorT<T>& input) {
  const Shape& s = input.shape();
  require(s.h >= 1 && s.w >= 1, "global_max_pool: empty spatial extent in " + s.str());
  TensorT<T> out(Shape{s.n, 1, 1, s.c});
  const std::size_t area = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = input.ptr(n, 0, 0, 0);
    T* dst = out.ptr(n, 0, 0, 0);
    std::copy(src, src + s.c, dst);
    for (std::size_t p = 1; p < area; ++p) {
      for (std::size_t c = 0; c < s.c; ++c) dst[c] = std::max(dst[c], src[p * s.c + c]);
    }
  }
  return out;
}

template <typename T>
TensorT<T> global_avg_max_pool(const TensorT<T>& input) {
  const TensorT<T> avg = global_avg_pool(input);
  const TensorT<T> mx = global_max_pool(input);
  const Shape& s = input.shape();
  TensorT<T> out(Shape{s.n, 1, 1, 2 * s.c});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      out.at(n, 0, 0, c) = avg.at(n, 0, 0, c);
      out.at(n, 0, 0, s.c + c) = mx.at(n, 0, 0, c);
    }
  }
  return out;
}

template <typename T>
TensorT<T> dense(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias) {
  const Shape& in = input.shape();
  const Shape& w = weights.shape();
  require(in.h == 1 && in.w == 1 && w.n == 1 && w.h == 1 && w.w == in.c,
          "dense: input " + in.str() + " incompatible with weights " + w.str());
  require(bias.shape() == Shape{1, 1, 1, w.c},
          "dense: bias " + bias.shape().str() + " incompatible with weights " + w.str());
  const std::size_t cin = w.w;
  const std::size_t cout = w.c;
  TensorT<T> out(Shape{in.n, 1, 1, cout});
  for (std::size_t n = 0; n < in.n; ++n) {
    T* dst = out.data() + n * cout;
    std::copy(bias.data(), bias.data() + cout, dst);
    const T* src = input.data() + n * cin;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T x = src[ci];
      const T* row = weights.data() + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) dst[co] += x * row[co];
    }
  }
  return out;
}

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  const std::size_t c = logits.shape().c;
  TensorT<T> out(logits.shape());
  if (c == 0) return out;
  const std::size_t rows = logits.size() / c;
  std::vector<double> e(c);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = logits.data() + r * c;
    const T peak = *std::max_element(src, src + c);
    double sum = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      e[i] = std::exp(static_cast<double>(src[i]) - static_cast<double>(peak));
      sum += e[i];
    }
    T* dst = out.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) dst[i] = static_cast<T>(e[i] / sum);
  }
  return out;
}

template <typename T>
TensorT<T> dropout(const TensorT<T>& input, double rate, Mode mode, Rng& rng, TensorT<T>* mask) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kInfer || rate == 0.0) {
    if (mask) *mask = TensorT<T>(input.shape(), T(1));
    return input;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  TensorT<T> local;
  TensorT<T>& m = mask ? *mask : local;
  m = TensorT<T>(input.shape());
  TensorT<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    m[i] = uniform01(rng) < rate ? T(0) : keep_scale;
    out[i] = input[i] * m[i];
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const TensorT<T>& input, const ConvParams<T>& params,
                             const TensorT<T>& grad_out) {
  require_cached(input, "conv2d_backward");
  const Shape& in = input.shape();
  const Shape& k = params.kernel.shape();
  require(k.w == in.c, "conv2d_backward: kernel " + k.str() + " incompatible with " + in.str());
  const ConvGeometry g = conv_geometry(in, params, "conv2d_backward");
  require(grad_out.shape() == Shape{in.n, g.rows.out, g.cols.out, k.c},
          "conv2d_backward: gradient shape " + grad_out.shape().str() + " does not match output");
  const std::size_t cin = in.c;
  const std::size_t cout = k.c;
  ConvGrads<T> grads{TensorT<T>(in), TensorT<T>(k)};

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oh = 0; oh < g.rows.out; ++oh) {
      for (std::size_t ow = 0; ow < g.cols.out; ++ow) {
        const T* gout = grad_out.ptr(n, oh, ow, 0);
        for (std::size_t kh = 0; kh < k.n; ++kh) {
          const auto ih = source_index(oh, kh, params.stride, g.rows.pad_before, in.h);
          if (ih < 0) continue;
          for (std::size_t kw = 0; kw < k.h; ++kw) {
            const auto iw = source_index(ow, kw, params.stride, g.cols.pad_before, in.w);
            if (iw < 0) continue;
            const auto uh = static_cast<std::size_t>(ih);
            const auto uw = static_cast<std::size_t>(iw);
            const T* src = input.ptr(n, uh, uw, 0);
            T* gin = grads.input.ptr(n, uh, uw, 0);
            const T* taps = params.kernel.ptr(kh, kw, 0, 0);
            T* gtaps = grads.kernel.ptr(kh, kw, 0, 0);
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* row = taps + ci * cout;
              T* grow = gtaps + ci * cout;
              const T x = src[ci];
              T acc = T(0);
              for (std::size_t co = 0; co < cout; ++co) {
                acc += gout[co] * row[co];
                grow[co] += x * gout[co];
              }
              gin[ci] += acc;
            }
          }
        }
      }
    }
  }
  return grads;
}

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const TensorT<T>& input, const ConvParams<T>& params,
                                       const TensorT<T>& grad_out) {
  require_cached(input, "depthwise_conv2d_backward");
  const Shape& in = input.shape();
  const Shape& k = params.kernel.shape();
  require(k.w == in.c && k.c == 1,
          "depthwise_conv2d_backward: kernel " + k.str() + " incompatible with " + in.str());
  const ConvGeometry g = conv_geometry(in, params, "depthwise_conv2d_backward");
  require(grad_out.shape() == Shape{in.n, g.rows.out, g.cols.out, in.c},
          "depthwise_conv2d_backward: gradient shape " + grad_out.shape().str() +
              " does not match output");
  const std::size_t ch = in.c;
  ConvGrads<T> grads{TensorT<T>(in), TensorT<T>(k)};

  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t oh = 0; oh < g.rows.out; ++oh) {
      for (std::size_t ow = 0; ow < g.cols.out; ++ow) {
        const T* gout = grad_out.ptr(n, oh, ow, 0);
        for (std::size_t kh = 0; kh < k.n; ++kh) {
          const auto ih = source_index(oh, kh, params.stride, g.rows.pad_before, in.h);
          if (ih < 0) continue;
          for (std::size_t kw = 0; kw < k.h; ++kw) {
            const auto iw = source_index(ow, kw, params.stride, g.cols.pad_before, in.w);
            if (iw < 0) continue;
            const auto uh = static_cast<std::size_t>(ih);
            const auto uw = static_cast<std::size_t>(iw);
            const T* src = input.ptr(n, uh, uw, 0);
            T* gin = grads.input.ptr(n, uh, uw, 0);
            const T* taps = params.kernel.ptr(kh, kw, 0, 0);
            T* gtaps = grads.kernel.ptr(kh, kw, 0, 0);
            for (std::size_t c = 0; c < ch; ++c) {
              gin[c] += gout[c] * taps[c];
              gtaps[c] += src[c] * gout[c];
            }
          }
        }
      }
    }
  }
  return grads;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const TensorT<T>& input, const BatchNormState<T>& state,
                                     Mode mode, const TensorT<T>& grad_out) {
  require_cached(input, "batchnorm_backward");
  require_same_shape(input, grad_out, "batchnorm_backward");
  check_bn_state(input, state);
  const std::size_t c = input.shape().c;
  const std::size_t m = input.size() / c;

  std::vector<double> mean;
  std::vector<double> var;
  if (mode == Mode::kTrain) {
    mean = channel_mean(input);
    var = channel_variance(input, mean);
  } else {
    mean.assign(state.running_mean.begin(), state.running_mean.end());
    var.assign(state.running_var.begin(), state.running_var.end());
  }
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + state.epsilon);

  std::vector<double> sum_dy(c, 0.0);
  std::vector<double> sum_dy_xhat(c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = input.data() + i * c;
    const T* dy = grad_out.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double xhat = (x[ch] - mean[ch]) * inv_std[ch];
      sum_dy[ch] += dy[ch];
      sum_dy_xhat[ch] += dy[ch] * xhat;
    }
  }

  BatchNormGrads<T> grads{TensorT<T>(input.shape()), std::vector<T>(c), std::vector<T>(c)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    grads.gamma[ch] = static_cast<T>(sum_dy_xhat[ch]);
    grads.beta[ch] = static_cast<T>(sum_dy[ch]);
  }
  const double count = static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = input.data() + i * c;
    const T* dy = grad_out.data() + i * c;
    T* dx = grads.input.data() + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double scale = state.gamma[ch] * inv_std[ch];
      if (mode == Mode::kTrain) {
        const double xhat = (x[ch] - mean[ch]) * inv_std[ch];
        dx[ch] = static_cast<T>(scale * (dy[ch] - sum_dy[ch] / count -
                                         xhat * sum_dy_xhat[ch] / count));
      } else {
        dx[ch] = static_cast<T>(scale * dy[ch]);
      }
    }
  }
  return grads;
}

template <typename T>
TensorT<T> relu6_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
  require_cached(input, "relu6_backward");
  require_same_shape(input, grad_out, "relu6_backward");
  TensorT<T> grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    grad[i] = (input[i] > T(0) && input[i] < T(6)) ? grad_out[i] : T(0);
  }
  return grad;
}

template <typename T>
TensorT<T> global_avg_pool_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
  require_cached(input, "global_avg_pool_backward");
  const Shape& s = input.shape();
  require_pooled(input, grad_out, s.c, "global_avg_pool_backward");
  const std::size_t area = s.h * s.w;
  const T inv = static_cast<T>(1.0 / static_cast<double>(area));
  TensorT<T> grad(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    T* dst = grad.ptr(n, 0, 0, 0);
    const T* g = grad_out.ptr(n, 0, 0, 0);
    for (std::size_t p = 0; p < area; ++p) {
      for (std::size_t c = 0; c < s.c; ++c) dst[p * s.c + c] = g[c] * inv;
    }
  }
  return grad;
}

template <typename T>
TensorT<T> global_max_pool_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
  require_cached(input, "global_max_pool_backward");
  const Shape& s = input.shape();
  require_pooled(input, grad_out, s.c, "global_max_pool_backward");
  const std::size_t area = s.h * s.w;
  TensorT<T> grad(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* src = input.ptr(n, 0, 0, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      std::size_t best = 0;
      for (std::size_t p = 1; p < area; ++p) {
        if (src[p * s.c + c] > src[best * s.c + c]) best = p;
      }
      grad[grad.offset(n, 0, 0, 0) + best * s.c + c] = grad_out.at(n, 0, 0, c);
    }
  }
  return grad;
}

template <typename T>
TensorT<T> global_avg_max_pool_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
  require_cached(input, "global_avg_max_pool_backward");
  const Shape& s = input.shape();
  require_pooled(input, grad_out, 2 * s.c, "global_avg_max_pool_backward");
  TensorT<T> g_avg(Shape{s.n, 1, 1, s.c});
  TensorT<T> g_max(Shape{s.n, 1, 1, s.c});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      g_avg.at(n, 0, 0, c) = grad_out.at(n, 0, 0, c);
      g_max.at(n, 0, 0, c) = grad_out.at(n, 0, 0, s.c + c);
    }
  }
  TensorT<T> grad = global_avg_pool_backward(input, g_avg);
  const TensorT<T> from_max = global_max_pool_backward(input, g_max);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += from_max[i];
  return grad;
}

template <typename T>
DenseGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& grad_out) {
  require_cached(input, "dense_backward");
  const Shape& in = input.shape();
  const Shape& w = weights.shape();
  require(in.h == 1 && in.w == 1 && w.w == in.c,
          "dense_backward: input " + in.str() + " incompatible with weights " + w.str());
  require(grad_out.shape() == Shape{in.n, 1, 1, w.c},
          "dense_backward: gradient shape " + grad_out.shape().str() + " does not match output");
  const std::size_t cin = w.w;
  const std::size_t cout = w.c;
  DenseGrads<T> grads{TensorT<T>(in), TensorT<T>(w), TensorT<T>(Shape{1, 1, 1, cout})};
  for (std::size_t n = 0; n < in.n; ++n) {
    const T* src = input.data() + n * cin;
    const T* g = grad_out.data() + n * cout;
    T* gin = grads.input.data() + n * cin;
    for (std::size_t co = 0; co < cout; ++co) grads.bias[co] += g[co];
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const T* row = weights.data() + ci * cout;
      T* grow = grads.weights.data() + ci * cout;
      T acc = T(0);
      for (std::size_t co = 0; co < cout; ++co) {
        acc += g[co] * row[co];
        grow[co] += src[ci] * g[co];
      }
      gin[ci] = acc;
    }
  }
  return grads;
}

template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& probabilities, const TensorT<T>& grad_out) {
  require_cached(probabilities, "softmax_backward");
  require_same_shape(probabilities, grad_out, "softmax_backward");
  const std::size_t c = probabilities.shape().c;
  TensorT<T> grad(probabilities.shape());
  if (c == 0) return grad;
  const std::size_t rows = probabilities.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = probabilities.data() + r * c;
    const T* g = grad_out.data() + r * c;
    double dot = 0.0;
    for (std::size_t i = 0; i < c; ++i) dot += static_cast<double>(p[i]) * g[i];
    T* dst = grad.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) dst[i] = static_cast<T>(p[i] * (g[i] - dot));
  }
  return grad;
}

template <typename T>
TensorT<T> dropout_backward(const TensorT<T>& mask, const TensorT<T>& grad_out) {
  require_cached(mask, "dropout_backward");
  require_same_shape(mask, grad_out, "dropout_backward");
  TensorT<T> grad(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) grad[i] = grad_out[i] * mask[i];
  return grad;
}

#define BIRR_INSTANTIATE_KERNELS(T)                                                          \
  template TensorT<T> conv2d(const TensorT<T>&, const ConvParams<T>&);                       \
  template TensorT<T> depthwise_conv2d(const TensorT<T>&, const ConvParams<T>&);             \
  template TensorT<T> batchnorm(const TensorT<T>&, BatchNormState<T>&, Mode);                \
  template TensorT<T> batchnorm(const TensorT<T>&, const BatchNormState<T>&);                \
  template TensorT<T> relu6(const TensorT<T>&);                                              \
  template TensorT<T> global_avg_pool(const TensorT<T>&);                                    \
  template TensorT<T> global_max_pool(const TensorT<T>&);                                    \
  template TensorT<T> global_avg_max_pool(const TensorT<T>&);                                \
  template TensorT<T> dense(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);        \
  template TensorT<T> softmax(const TensorT<T>&);                                            \
  template TensorT<T> dropout(const TensorT<T>&, double, Mode, Rng&, TensorT<T>*);           \
  template ConvGrads<T> conv2d_backward(const TensorT<T>&, const ConvParams<T>&,             \
                                        const TensorT<T>&);                                  \
  template ConvGrads<T> depthwise_conv2d_backward(const TensorT<T>&, const ConvParams<T>&,   \
                                                  const TensorT<T>&);                        \
  template BatchNormGrads<T> batchnorm_backward(const TensorT<T>&, const BatchNormState<T>&, \
                                                Mode, const TensorT<T>&);                    \
  template TensorT<T> relu6_backward(const TensorT<T>&, const TensorT<T>&);                  \
  template TensorT<T> global_avg_pool_backward(const TensorT<T>&, const TensorT<T>&);        \
  template TensorT<T> global_max_pool_backward(const TensorT<T>&, const TensorT<T>&);        \
  template TensorT<T> global_avg_max_pool_backward(const TensorT<T>&, const TensorT<T>&);    \
  template DenseGrads<T> dense_backward(const TensorT<T>&, const TensorT<T>&,                \
                                        const TensorT<T>&);                                  \
  template TensorT<T> softmax_backward(const TensorT<T>&, const TensorT<T>&);                \
  template TensorT<T> dropout_backward(const TensorT<T>&, const TensorT<T>&);

BIRR_INSTANTIATE_KERNELS(float)
BIRR_INSTANTIATE_KERNELS(double)

#undef BIRR_INSTANTIATE_KERNELS

}  // namespace birr::kernels
