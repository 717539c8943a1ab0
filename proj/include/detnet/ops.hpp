#pragma once

#include "detnet/tensor.hpp"

namespace detnet {

// Convolution geometry. Temporal fields are 1/1/0 for 2D use.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kt = 1, kh = 0, kw = 0;
  int st = 1, sh = 1, sw = 1;
  int pt = 0, ph = 0, pw = 0;

  static ConvSpec conv2d(int in_ch, int out_ch, int k, int stride = 1, int pad = 0) {
    ConvSpec s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kh = s.kw = k;
    s.sh = s.sw = stride;
    s.ph = s.pw = pad;
    return s;
  }

  static ConvSpec conv3d(int in_ch, int out_ch, int kt, int khw, int pad_t, int pad_hw) {
    ConvSpec s;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kt = kt;
    s.kh = s.kw = khw;
    s.pt = pad_t;
    s.ph = s.pw = pad_hw;
    return s;
  }

  // (in + 2*pad - kernel)/stride + 1; throws config_error unless integral and >= 1
  static int out_extent(int in, int kernel, int stride, int pad, const char* axis);
};

// Weights + bias for conv layers; scale/shift/running stats for norm layers.
// weights layout: [out_ch, in_ch, (kt,) kh, kw]; bias: [out_ch].
template <typename T>
struct LayerParamsT {
  TensorT<T> weights;
  TensorT<T> bias;
  TensorT<T> scale;
  TensorT<T> shift;
  TensorT<T> running_mean;
  TensorT<T> running_var;
};

using LayerParams = LayerParamsT<float>;

enum class NormMode { kTrain, kInfer };

// Saved batch statistics from a train-mode norm forward, needed by backward.
template <typename T>
struct NormCacheT {
  TensorT<T> mean;     // [C]
  TensorT<T> inv_std;  // [C], 1/sqrt(var + eps)
};

using NormCache = NormCacheT<float>;

// --- forward kernels ------------------------------------------------------
// Accumulation is 32-bit in the float instantiation with a fixed kernel-major
// summation order (in_channel, then kernel offsets), so runs are bit-stable.

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const LayerParamsT<T>& params,
                          const ConvSpec& spec);

template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const LayerParamsT<T>& params,
                          const ConvSpec& spec);

// fixed 2x2 window, stride 2; spatial extents must be even
template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& input);

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& input, T slope = T(0.1));

template <typename T>
TensorT<T> logistic(const TensorT<T>& input);

template <typename T>
T logistic_scalar(T x);

// Per-channel normalization over all non-channel axes (axis 1 = channel; works
// for [N,C,H,W] and [N,C,T,H,W]). Train mode uses batch statistics and updates
// running stats in params; infer mode reads running stats.
template <typename T>
TensorT<T> channel_norm(const TensorT<T>& input, LayerParamsT<T>& params, NormMode mode,
                        T momentum = T(0.1), T eps = T(1e-5),
                        NormCacheT<T>* cache = nullptr);

// --- backward kernels -----------------------------------------------------

template <typename T>
void conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                     const TensorT<T>& weights, const ConvSpec& spec,
                     TensorT<T>* grad_input, TensorT<T>* grad_weights,
                     TensorT<T>* grad_bias);

template <typename T>
void conv3d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                     const TensorT<T>& weights, const ConvSpec& spec,
                     TensorT<T>* grad_input, TensorT<T>* grad_weights,
                     TensorT<T>* grad_bias);

template <typename T>
void maxpool2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                        TensorT<T>* grad_input);

template <typename T>
void leaky_relu_backward(const TensorT<T>& grad_out, const TensorT<T>& input, T slope,
                         TensorT<T>* grad_input);

// uses the forward output (sigma' = y*(1-y))
template <typename T>
void logistic_backward(const TensorT<T>& grad_out, const TensorT<T>& output,
                       TensorT<T>* grad_input);

template <typename T>
void channel_norm_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                           const TensorT<T>& scale, const NormCacheT<T>& cache,
                           TensorT<T>* grad_input, TensorT<T>* grad_scale,
                           TensorT<T>* grad_shift);

}  // namespace detnet
