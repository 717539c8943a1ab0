#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "detnet/ops.hpp"
#include "detnet/tensor.hpp"

namespace detnet {

// Reverse-mode tape. Records each executed op with the ids of its operands;
// backward() replays the records in exact reverse execution order and
// accumulates adjoints into per-value gradient buffers. Every recorded value
// gets a gradient buffer (zero if never touched).
template <typename T>
class TapeT {
 public:
  using Id = int;

  Id leaf(TensorT<T> value) { return push_value(std::move(value)); }

  Id conv2d(Id x, Id w, Id b, const ConvSpec& spec);
  Id conv3d(Id x, Id w, Id b, const ConvSpec& spec);
  Id maxpool2d(Id x);
  Id leaky_relu(Id x, T slope = T(0.1));
  Id logistic(Id x);
  // Train-mode normalization; running stats live outside the tape and are
  // updated in place during the forward record.
  Id channel_norm(Id x, Id scale, Id shift, TensorT<T>& running_mean,
                  TensorT<T>& running_var, T momentum = T(0.1), T eps = T(1e-5));
  // Inference-mode normalization: a per-channel affine from frozen running
  // stats, differentiable in x/scale/shift.
  Id channel_norm_infer(Id x, Id scale, Id shift, const TensorT<T>& running_mean,
                        const TensorT<T>& running_var, T eps = T(1e-5));
  // [N*F, C, H, W] -> [N, C, F, H, W]
  Id stack_time(Id x, int batch, int frames);
  // [N*F, C, H, W] -> [N, C, H, W], keeping frame `index` of each sample
  Id select_frame(Id x, int batch, int frames, int index);
  Id reshape(Id x, std::vector<int> shape);
  Id sum(Id x);

  // Escape hatch for composed/custom ops (also used by tests to inject a
  // deliberately corrupted adjoint). `back` must accumulate into input grads.
  Id custom(std::vector<Id> inputs, TensorT<T> output,
            std::function<void(TapeT&, Id out, const std::vector<Id>& in)> back);

  void backward(Id output, TensorT<T> seed);
  void backward_scalar(Id output);  // seed of ones, for scalar outputs

  const TensorT<T>& value(Id id) const { return values_[static_cast<std::size_t>(id)]; }
  TensorT<T>& value_mut(Id id) { return values_[static_cast<std::size_t>(id)]; }
  const TensorT<T>& grad(Id id) const { return grads_[static_cast<std::size_t>(id)]; }
  TensorT<T>& grad_mut(Id id) { return grads_[static_cast<std::size_t>(id)]; }
  std::size_t num_values() const { return values_.size(); }
  std::size_t num_ops() const { return nodes_.size(); }

 private:
  struct Node {
    std::function<void(TapeT&)> back;
  };

  Id push_value(TensorT<T> v) {
    values_.push_back(std::move(v));
    return static_cast<Id>(values_.size() - 1);
  }

  std::vector<TensorT<T>> values_;
  std::vector<TensorT<T>> grads_;
  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

}  // namespace detnet
