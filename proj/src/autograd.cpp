#include "detnet/autograd.hpp"

#include <cmath>

#include "detnet/errors.hpp"

namespace detnet {

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv2d(Id x, Id w, Id b, const ConvSpec& spec) {
  LayerParamsT<T> p;
  p.weights = value(w);
  p.bias = value(b);
  Id out = push_value(conv2d_forward(value(x), p, spec));
  nodes_.push_back({[x, w, b, out, spec](TapeT& t) {
    conv2d_backward(t.grad(out), t.value(x), t.value(w), spec, &t.grad_mut(x),
                    &t.grad_mut(w), &t.grad_mut(b));
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::conv3d(Id x, Id w, Id b, const ConvSpec& spec) {
  LayerParamsT<T> p;
  p.weights = value(w);
  p.bias = value(b);
  Id out = push_value(conv3d_forward(value(x), p, spec));
  nodes_.push_back({[x, w, b, out, spec](TapeT& t) {
    conv3d_backward(t.grad(out), t.value(x), t.value(w), spec, &t.grad_mut(x),
                    &t.grad_mut(w), &t.grad_mut(b));
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::maxpool2d(Id x) {
  Id out = push_value(detnet::maxpool2d(value(x)));
  nodes_.push_back({[x, out](TapeT& t) {
    maxpool2d_backward(t.grad(out), t.value(x), &t.grad_mut(x));
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::leaky_relu(Id x, T slope) {
  Id out = push_value(detnet::leaky_relu(value(x), slope));
  nodes_.push_back({[x, out, slope](TapeT& t) {
    leaky_relu_backward(t.grad(out), t.value(x), slope, &t.grad_mut(x));
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::logistic(Id x) {
  Id out = push_value(detnet::logistic(value(x)));
  nodes_.push_back({[x, out](TapeT& t) {
    logistic_backward(t.grad(out), t.value(out), &t.grad_mut(x));
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::channel_norm(Id x, Id scale, Id shift,
                                             TensorT<T>& running_mean,
                                             TensorT<T>& running_var, T momentum, T eps) {
  LayerParamsT<T> p;
  p.scale = value(scale);
  p.shift = value(shift);
  p.running_mean = running_mean;
  p.running_var = running_var;
  NormCacheT<T> cache;
  Id out = push_value(
      detnet::channel_norm(value(x), p, NormMode::kTrain, momentum, eps, &cache));
  running_mean = p.running_mean;
  running_var = p.running_var;
  nodes_.push_back({[x, scale, shift, out, cache = std::move(cache)](TapeT& t) {
    channel_norm_backward(t.grad(out), t.value(x), t.value(scale), cache, &t.grad_mut(x),
                          &t.grad_mut(scale), &t.grad_mut(shift));
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::channel_norm_infer(Id x, Id scale, Id shift,
                                                   const TensorT<T>& running_mean,
                                                   const TensorT<T>& running_var,
                                                   T eps) {
  LayerParamsT<T> p;
  p.scale = value(scale);
  p.shift = value(shift);
  p.running_mean = running_mean;
  p.running_var = running_var;
  Id out = push_value(
      detnet::channel_norm(value(x), p, NormMode::kInfer, T(0), eps));
  // Frozen stats make this a plain per-channel affine map.
  const int C = running_mean.dim(0);
  TensorT<T> inv_std({C});
  for (int c = 0; c < C; ++c)
    inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
  TensorT<T> mean = running_mean;
  nodes_.push_back({[x, scale, shift, out, inv_std = std::move(inv_std),
                     mean = std::move(mean)](TapeT& t) {
    const TensorT<T>& go = t.grad(out);
    const TensorT<T>& in = t.value(x);
    const TensorT<T>& sc = t.value(scale);
    TensorT<T>& gi = t.grad_mut(x);
    TensorT<T>& gs = t.grad_mut(scale);
    TensorT<T>& gb = t.grad_mut(shift);
    const int C = inv_std.dim(0);
    const std::int64_t n = in.size();
    std::int64_t inner = 1;
    for (int a = 2; a < in.rank(); ++a) inner *= in.dim(a);
    for (std::int64_t i = 0; i < n; ++i) {
      const int c = static_cast<int>((i / inner) % C);
      const T g = go[i];
      gi[i] += g * inv_std[c] * sc[c];
      gs[c] += g * (in[i] - mean[c]) * inv_std[c];
      gb[c] += g;
    }
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::stack_time(Id x, int batch, int frames) {
  const TensorT<T>& in = value(x);
  DETNET_CHECK_T(in.rank() == 4 && in.dim(0) == batch * frames, shape_error,
                 "stack_time: expected [" << batch * frames << ",C,H,W], got "
                                          << in.shape_str());
  const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  TensorT<T> out({batch, C, frames, H, W});
  for (int n = 0; n < batch; ++n)
    for (int f = 0; f < frames; ++f)
      for (int c = 0; c < C; ++c) {
        const T* src = in.data() + ((static_cast<std::int64_t>(n) * frames + f) * C + c) * plane;
        T* dst = out.data() + ((static_cast<std::int64_t>(n) * C + c) * frames + f) * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i];
      }
  Id out_id = push_value(std::move(out));
  nodes_.push_back({[x, out_id, batch, frames, C, plane](TapeT& t) {
    const TensorT<T>& go = t.grad(out_id);
    TensorT<T>& gi = t.grad_mut(x);
    for (int n = 0; n < batch; ++n)
      for (int f = 0; f < frames; ++f)
        for (int c = 0; c < C; ++c) {
          const T* src =
              go.data() + ((static_cast<std::int64_t>(n) * C + c) * frames + f) * plane;
          T* dst =
              gi.data() + ((static_cast<std::int64_t>(n) * frames + f) * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
  }});
  return out_id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::select_frame(Id x, int batch, int frames, int index) {
  const TensorT<T>& in = value(x);
  DETNET_CHECK_T(in.rank() == 4 && in.dim(0) == batch * frames, shape_error,
                 "select_frame: expected [" << batch * frames << ",C,H,W], got "
                                            << in.shape_str());
  DETNET_CHECK_T(index >= 0 && index < frames, config_error,
                 "select_frame: frame " << index << " out of " << frames);
  const int C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::int64_t row = static_cast<std::int64_t>(C) * H * W;
  TensorT<T> out({batch, C, H, W});
  for (int n = 0; n < batch; ++n) {
    const T* src = in.data() + (static_cast<std::int64_t>(n) * frames + index) * row;
    T* dst = out.data() + static_cast<std::int64_t>(n) * row;
    for (std::int64_t i = 0; i < row; ++i) dst[i] = src[i];
  }
  Id out_id = push_value(std::move(out));
  nodes_.push_back({[x, out_id, batch, frames, index, row](TapeT& t) {
    const TensorT<T>& go = t.grad(out_id);
    TensorT<T>& gi = t.grad_mut(x);
    for (int n = 0; n < batch; ++n) {
      const T* src = go.data() + static_cast<std::int64_t>(n) * row;
      T* dst = gi.data() + (static_cast<std::int64_t>(n) * frames + index) * row;
      for (std::int64_t i = 0; i < row; ++i) dst[i] += src[i];
    }
  }});
  return out_id;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::reshape(Id x, std::vector<int> shape) {
  Id out = push_value(value(x).reshaped(std::move(shape)));
  nodes_.push_back({[x, out](TapeT& t) {
    const TensorT<T>& go = t.grad(out);
    TensorT<T>& gi = t.grad_mut(x);
    for (std::int64_t i = 0; i < go.size(); ++i) gi[i] += go[i];
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::sum(Id x) {
  const TensorT<T>& in = value(x);
  T acc = T(0);
  for (std::int64_t i = 0; i < in.size(); ++i) acc += in[i];
  Id out = push_value(TensorT<T>::scalar(acc));
  nodes_.push_back({[x, out](TapeT& t) {
    const T g = t.grad(out)[0];
    TensorT<T>& gi = t.grad_mut(x);
    for (std::int64_t i = 0; i < gi.size(); ++i) gi[i] += g;
  }});
  return out;
}

template <typename T>
typename TapeT<T>::Id TapeT<T>::custom(
    std::vector<Id> inputs, TensorT<T> output,
    std::function<void(TapeT&, Id, const std::vector<Id>&)> back) {
  Id out = push_value(std::move(output));
  nodes_.push_back({[out, inputs = std::move(inputs), back = std::move(back)](TapeT& t) {
    back(t, out, inputs);
  }});
  return out;
}

template <typename T>
void TapeT<T>::backward(Id output, TensorT<T> seed) {
  DETNET_CHECK_T(seed.same_shape(value(output)), shape_error,
                 "backward: seed shape " << seed.shape_str() << " != output shape "
                                         << value(output).shape_str());
  grads_.clear();
  grads_.reserve(values_.size());
  for (const auto& v : values_) grads_.emplace_back(v.shape());
  grads_[static_cast<std::size_t>(output)] = std::move(seed);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->back(*this);
}

template <typename T>
void TapeT<T>::backward_scalar(Id output) {
  backward(output, TensorT<T>::full(value(output).shape(), T(1)));
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace detnet
