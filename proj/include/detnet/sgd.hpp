#pragma once

#include "detnet/tensor.hpp"

namespace detnet {

struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 32;

  void validate() const {
    DETNET_CHECK_T(learning_rate > 0.0, config_error, "learning_rate must be positive");
    DETNET_CHECK_T(momentum >= 0.0 && momentum < 1.0, config_error,
                   "momentum must be in [0,1)");
    DETNET_CHECK_T(weight_decay >= 0.0, config_error, "weight_decay must be >= 0");
    DETNET_CHECK_T(batch_size >= 1, config_error, "batch_size must be >= 1");
  }
};

// v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr*v
template <typename T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& velocity,
              const SgdConfig& cfg) {
  DETNET_CHECK_T(param.same_shape(grad) && param.same_shape(velocity), shape_error,
                 "sgd_step: param/grad/velocity shapes differ");
  const T m = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T lr = static_cast<T>(cfg.learning_rate);
  T* th = param.data();
  const T* g = grad.data();
  T* v = velocity.data();
  for (std::int64_t i = 0; i < param.size(); ++i) {
    v[i] = m * v[i] + g[i] + wd * th[i];
    th[i] -= lr * v[i];
  }
}

}  // namespace detnet
