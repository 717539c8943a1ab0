#include "detnet/ops.hpp"

#include <algorithm>
#include <cmath>

namespace detnet {

namespace {

// ceil(a/b) for b > 0, a any sign
inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// floor division for possibly-negative numerators (window upper bounds)
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

template <typename T>
void check_conv_input(const TensorT<T>& input, const TensorT<T>& weights,
                      const TensorT<T>& bias, const ConvSpec& s, int rank,
                      const char* op) {
  DETNET_CHECK_T(input.rank() == rank, shape_error,
                 op << ": expected rank-" << rank << " input, got " << input.shape_str());
  DETNET_CHECK_T(input.dim(1) == s.in_channels, shape_error,
                 op << ": channel axis has extent " << input.dim(1) << ", spec expects "
                    << s.in_channels);
  const int wrank = rank;  // [oc, ic, (kt,) kh, kw]
  DETNET_CHECK_T(weights.rank() == wrank && weights.dim(0) == s.out_channels &&
                     weights.dim(1) == s.in_channels,
                 shape_error, op << ": weight shape " << weights.shape_str()
                                 << " inconsistent with spec (out=" << s.out_channels
                                 << ", in=" << s.in_channels << ")");
  if (rank == 5) {
    DETNET_CHECK_T(weights.dim(2) == s.kt && weights.dim(3) == s.kh && weights.dim(4) == s.kw,
                   shape_error, op << ": weight kernel extents " << weights.shape_str()
                                   << " differ from spec " << s.kt << "x" << s.kh << "x"
                                   << s.kw);
  } else {
    DETNET_CHECK_T(weights.dim(2) == s.kh && weights.dim(3) == s.kw, shape_error,
                   op << ": weight kernel extents " << weights.shape_str()
                      << " differ from spec " << s.kh << "x" << s.kw);
  }
  DETNET_CHECK_T(bias.size() == s.out_channels, shape_error,
                 op << ": bias length " << bias.size() << " != out_channels "
                    << s.out_channels);
}

}  // namespace

int ConvSpec::out_extent(int in, int kernel, int stride, int pad, const char* axis) {
  const int span = in + 2 * pad - kernel;
  DETNET_CHECK_T(span >= 0 && span % stride == 0, config_error,
                 "conv " << axis << " axis: (" << in << " + 2*" << pad << " - " << kernel
                         << ") not a non-negative multiple of stride " << stride);
  const int out = span / stride + 1;
  DETNET_CHECK_T(out >= 1, config_error, "conv " << axis << " axis collapses to " << out);
  return out;
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const LayerParamsT<T>& params,
                          const ConvSpec& s) {
  check_conv_input(input, params.weights, params.bias, s, 4, "conv2d");
  const int N = input.dim(0), IC = input.dim(1), IH = input.dim(2), IW = input.dim(3);
  const int OC = s.out_channels;
  const int OH = ConvSpec::out_extent(IH, s.kh, s.sh, s.ph, "height");
  const int OW = ConvSpec::out_extent(IW, s.kw, s.sw, s.pw, "width");

  TensorT<T> out({N, OC, OH, OW});
  const T* in = input.data();
  const T* w = params.weights.data();
  const T* b = params.bias.data();
  T* o = out.data();

  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      T* out_plane = o + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
      const T bv = b[oc];
      for (int i = 0; i < OH * OW; ++i) out_plane[i] = bv;
      for (int ic = 0; ic < IC; ++ic) {
        const T* in_plane = in + (static_cast<std::int64_t>(n) * IC + ic) * IH * IW;
        const T* w_plane = w + (static_cast<std::int64_t>(oc) * IC + ic) * s.kh * s.kw;
        for (int kh = 0; kh < s.kh; ++kh) {
          const int oh0 = std::max(0, ceil_div(s.ph - kh, s.sh));
          const int oh1 = std::min(OH, floor_div(IH - 1 - kh + s.ph, s.sh) + 1);
          for (int kw = 0; kw < s.kw; ++kw) {
            const T wv = w_plane[kh * s.kw + kw];
            for (int oh = oh0; oh < oh1; ++oh) {
              const int ih = oh * s.sh + kh - s.ph;
              const T* in_row = in_plane + static_cast<std::int64_t>(ih) * IW;
              T* out_row = out_plane + static_cast<std::int64_t>(oh) * OW;
              if (s.sw == 1) {
                const int ow0 = std::max(0, s.pw - kw);
                const int ow1 = std::min(OW, IW - kw + s.pw);
                const T* src = in_row + kw - s.pw;
                for (int ow = ow0; ow < ow1; ++ow) out_row[ow] += wv * src[ow];
              } else {
                for (int ow = 0; ow < OW; ++ow) {
                  const int iw = ow * s.sw + kw - s.pw;
                  if (iw >= 0 && iw < IW) out_row[ow] += wv * in_row[iw];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> conv3d_forward(const TensorT<T>& input, const LayerParamsT<T>& params,
                          const ConvSpec& s) {
  check_conv_input(input, params.weights, params.bias, s, 5, "conv3d");
  const int N = input.dim(0), IC = input.dim(1), IT = input.dim(2), IH = input.dim(3),
            IW = input.dim(4);
  const int OC = s.out_channels;
  const int OT = ConvSpec::out_extent(IT, s.kt, s.st, s.pt, "temporal");
  const int OH = ConvSpec::out_extent(IH, s.kh, s.sh, s.ph, "height");
  const int OW = ConvSpec::out_extent(IW, s.kw, s.sw, s.pw, "width");

  TensorT<T> out({N, OC, OT, OH, OW});
  const T* in = input.data();
  const T* w = params.weights.data();
  const T* b = params.bias.data();
  T* o = out.data();
  const std::int64_t in_chan_stride = static_cast<std::int64_t>(IT) * IH * IW;
  const std::int64_t out_chan_stride = static_cast<std::int64_t>(OT) * OH * OW;

  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      T* out_vol = o + (static_cast<std::int64_t>(n) * OC + oc) * out_chan_stride;
      const T bv = b[oc];
      for (std::int64_t i = 0; i < out_chan_stride; ++i) out_vol[i] = bv;
      for (int ic = 0; ic < IC; ++ic) {
        const T* in_vol = in + (static_cast<std::int64_t>(n) * IC + ic) * in_chan_stride;
        const T* w_vol =
            w + ((static_cast<std::int64_t>(oc) * IC + ic) * s.kt) * s.kh * s.kw;
        for (int kt = 0; kt < s.kt; ++kt) {
          const int ot0 = std::max(0, ceil_div(s.pt - kt, s.st));
          const int ot1 = std::min(OT, floor_div(IT - 1 - kt + s.pt, s.st) + 1);
          for (int kh = 0; kh < s.kh; ++kh) {
            const int oh0 = std::max(0, ceil_div(s.ph - kh, s.sh));
            const int oh1 = std::min(OH, floor_div(IH - 1 - kh + s.ph, s.sh) + 1);
            for (int kw = 0; kw < s.kw; ++kw) {
              const T wv = w_vol[(kt * s.kh + kh) * s.kw + kw];
              for (int ot = ot0; ot < ot1; ++ot) {
                const int it = ot * s.st + kt - s.pt;
                for (int oh = oh0; oh < oh1; ++oh) {
                  const int ih = oh * s.sh + kh - s.ph;
                  const T* in_row =
                      in_vol + (static_cast<std::int64_t>(it) * IH + ih) * IW;
                  T* out_row = out_vol + (static_cast<std::int64_t>(ot) * OH + oh) * OW;
                  if (s.sw == 1) {
                    const int ow0 = std::max(0, s.pw - kw);
                    const int ow1 = std::min(OW, IW - kw + s.pw);
                    const T* src = in_row + kw - s.pw;
                    for (int ow = ow0; ow < ow1; ++ow) out_row[ow] += wv * src[ow];
                  } else {
                    for (int ow = 0; ow < OW; ++ow) {
                      const int iw = ow * s.sw + kw - s.pw;
                      if (iw >= 0 && iw < IW) out_row[ow] += wv * in_row[iw];
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> maxpool2d(const TensorT<T>& input) {
  DETNET_CHECK_T(input.rank() == 4, shape_error,
                 "maxpool2d: expected rank-4 input, got " << input.shape_str());
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  DETNET_CHECK_T(H % 2 == 0 && W % 2 == 0, shape_error,
                 "maxpool2d: spatial extents must be even, got " << H << "x" << W);
  TensorT<T> out({N, C, H / 2, W / 2});
  const T* in = input.data();
  T* o = out.data();
  const int OH = H / 2, OW = W / 2;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = in + static_cast<std::int64_t>(nc) * H * W;
    T* out_plane = o + static_cast<std::int64_t>(nc) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        const T* p = plane + (2 * oh) * W + 2 * ow;
        T m = p[0];
        if (p[1] > m) m = p[1];
        if (p[W] > m) m = p[W];
        if (p[W + 1] > m) m = p[W + 1];
        out_plane[oh * OW + ow] = m;
      }
    }
  }
  return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& input, T slope) {
  TensorT<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (std::int64_t i = 0; i < input.size(); ++i) y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
  return out;
}

template <typename T>
T logistic_scalar(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
TensorT<T> logistic(const TensorT<T>& input) {
  TensorT<T> out(input.shape());
  const T* x = input.data();
  T* y = out.data();
  for (std::int64_t i = 0; i < input.size(); ++i) y[i] = logistic_scalar(x[i]);
  return out;
}

template <typename T>
TensorT<T> channel_norm(const TensorT<T>& input, LayerParamsT<T>& params, NormMode mode,
                        T momentum, T eps, NormCacheT<T>* cache) {
  DETNET_CHECK_T(input.rank() >= 2, shape_error,
                 "channel_norm: need a channel axis, got " << input.shape_str());
  const int N = input.dim(0);
  const int C = input.dim(1);
  std::int64_t S = 1;  // per-(n,c) block size
  for (int a = 2; a < input.rank(); ++a) S *= input.dim(a);
  const std::int64_t M = static_cast<std::int64_t>(N) * S;  // values per channel
  DETNET_CHECK_T(params.scale.size() == C && params.shift.size() == C, shape_error,
                 "channel_norm: scale/shift must have " << C << " entries");

  const T* x = input.data();
  TensorT<T> out(input.shape());
  T* y = out.data();

  TensorT<T> mean({C}), inv_std({C});
  if (mode == NormMode::kTrain) {
    // two-pass batch statistics, fixed n-major order
    TensorT<T> var({C});
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) {
        const T* blk = x + (static_cast<std::int64_t>(n) * C + c) * S;
        for (std::int64_t i = 0; i < S; ++i) acc += blk[i];
      }
      mean[c] = acc / static_cast<T>(M);
    }
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      const T mu = mean[c];
      for (int n = 0; n < N; ++n) {
        const T* blk = x + (static_cast<std::int64_t>(n) * C + c) * S;
        for (std::int64_t i = 0; i < S; ++i) {
          const T d = blk[i] - mu;
          acc += d * d;
        }
      }
      var[c] = acc / static_cast<T>(M);
      inv_std[c] = T(1) / std::sqrt(var[c] + eps);
    }
    DETNET_CHECK_T(params.running_mean.size() == C && params.running_var.size() == C,
                   shape_error, "channel_norm: running stats must have " << C << " entries");
    for (int c = 0; c < C; ++c) {
      params.running_mean[c] = (T(1) - momentum) * params.running_mean[c] + momentum * mean[c];
      params.running_var[c] = (T(1) - momentum) * params.running_var[c] + momentum * var[c];
    }
  } else {
    for (int c = 0; c < C; ++c) {
      DETNET_CHECK_T(params.running_var[c] > T(0), numeric_error,
                     "channel_norm: running variance must be positive at channel " << c);
      mean[c] = params.running_mean[c];
      inv_std[c] = T(1) / std::sqrt(params.running_var[c] + eps);
    }
  }

  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* blk = x + (static_cast<std::int64_t>(n) * C + c) * S;
      T* out_blk = y + (static_cast<std::int64_t>(n) * C + c) * S;
      const T mu = mean[c], is = inv_std[c], g = params.scale[c], b = params.shift[c];
      for (std::int64_t i = 0; i < S; ++i) out_blk[i] = (blk[i] - mu) * is * g + b;
    }
  }

  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
void conv2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                     const TensorT<T>& weights, const ConvSpec& s, TensorT<T>* grad_input,
                     TensorT<T>* grad_weights, TensorT<T>* grad_bias) {
  const int N = input.dim(0), IC = input.dim(1), IH = input.dim(2), IW = input.dim(3);
  const int OC = s.out_channels, OH = grad_out.dim(2), OW = grad_out.dim(3);
  const T* go = grad_out.data();
  const T* in = input.data();
  const T* w = weights.data();

  if (grad_bias) {
    T* gb = grad_bias->data();
    for (int n = 0; n < N; ++n) {
      for (int oc = 0; oc < OC; ++oc) {
        const T* plane = go + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
        T acc = T(0);
        for (int i = 0; i < OH * OW; ++i) acc += plane[i];
        gb[oc] += acc;
      }
    }
  }

  if (grad_weights) {
    T* gw = grad_weights->data();
    for (int n = 0; n < N; ++n) {
      for (int oc = 0; oc < OC; ++oc) {
        const T* go_plane = go + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
        for (int ic = 0; ic < IC; ++ic) {
          const T* in_plane = in + (static_cast<std::int64_t>(n) * IC + ic) * IH * IW;
          T* gw_plane = gw + (static_cast<std::int64_t>(oc) * IC + ic) * s.kh * s.kw;
          for (int kh = 0; kh < s.kh; ++kh) {
            const int oh0 = std::max(0, ceil_div(s.ph - kh, s.sh));
            const int oh1 = std::min(OH, floor_div(IH - 1 - kh + s.ph, s.sh) + 1);
            for (int kw = 0; kw < s.kw; ++kw) {
              T acc = T(0);
              for (int oh = oh0; oh < oh1; ++oh) {
                const int ih = oh * s.sh + kh - s.ph;
                const T* in_row = in_plane + static_cast<std::int64_t>(ih) * IW;
                const T* go_row = go_plane + static_cast<std::int64_t>(oh) * OW;
                if (s.sw == 1) {
                  const int ow0 = std::max(0, s.pw - kw);
                  const int ow1 = std::min(OW, IW - kw + s.pw);
                  const T* src = in_row + kw - s.pw;
                  for (int ow = ow0; ow < ow1; ++ow) acc += go_row[ow] * src[ow];
                } else {
                  for (int ow = 0; ow < OW; ++ow) {
                    const int iw = ow * s.sw + kw - s.pw;
                    if (iw >= 0 && iw < IW) acc += go_row[ow] * in_row[iw];
                  }
                }
              }
              gw_plane[kh * s.kw + kw] += acc;
            }
          }
        }
      }
    }
  }

  if (grad_input) {
    T* gi = grad_input->data();
    for (int n = 0; n < N; ++n) {
      for (int oc = 0; oc < OC; ++oc) {
        const T* go_plane = go + (static_cast<std::int64_t>(n) * OC + oc) * OH * OW;
        for (int ic = 0; ic < IC; ++ic) {
          T* gi_plane = gi + (static_cast<std::int64_t>(n) * IC + ic) * IH * IW;
          const T* w_plane = w + (static_cast<std::int64_t>(oc) * IC + ic) * s.kh * s.kw;
          for (int kh = 0; kh < s.kh; ++kh) {
            const int oh0 = std::max(0, ceil_div(s.ph - kh, s.sh));
            const int oh1 = std::min(OH, floor_div(IH - 1 - kh + s.ph, s.sh) + 1);
            for (int kw = 0; kw < s.kw; ++kw) {
              const T wv = w_plane[kh * s.kw + kw];
              for (int oh = oh0; oh < oh1; ++oh) {
                const int ih = oh * s.sh + kh - s.ph;
                T* gi_row = gi_plane + static_cast<std::int64_t>(ih) * IW;
                const T* go_row = go_plane + static_cast<std::int64_t>(oh) * OW;
                if (s.sw == 1) {
                  const int ow0 = std::max(0, s.pw - kw);
                  const int ow1 = std::min(OW, IW - kw + s.pw);
                  T* dst = gi_row + kw - s.pw;
                  for (int ow = ow0; ow < ow1; ++ow) dst[ow] += wv * go_row[ow];
                } else {
                  for (int ow = 0; ow < OW; ++ow) {
                    const int iw = ow * s.sw + kw - s.pw;
                    if (iw >= 0 && iw < IW) gi_row[iw] += wv * go_row[ow];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                     const TensorT<T>& weights, const ConvSpec& s, TensorT<T>* grad_input,
                     TensorT<T>* grad_weights, TensorT<T>* grad_bias) {
  const int N = input.dim(0), IC = input.dim(1), IT = input.dim(2), IH = input.dim(3),
            IW = input.dim(4);
  const int OC = s.out_channels, OT = grad_out.dim(2), OH = grad_out.dim(3),
            OW = grad_out.dim(4);
  const T* go = grad_out.data();
  const T* in = input.data();
  const T* w = weights.data();
  const std::int64_t in_cs = static_cast<std::int64_t>(IT) * IH * IW;
  const std::int64_t out_cs = static_cast<std::int64_t>(OT) * OH * OW;

  if (grad_bias) {
    T* gb = grad_bias->data();
    for (int n = 0; n < N; ++n) {
      for (int oc = 0; oc < OC; ++oc) {
        const T* vol = go + (static_cast<std::int64_t>(n) * OC + oc) * out_cs;
        T acc = T(0);
        for (std::int64_t i = 0; i < out_cs; ++i) acc += vol[i];
        gb[oc] += acc;
      }
    }
  }

  if (grad_weights) {
    T* gw = grad_weights->data();
    for (int n = 0; n < N; ++n) {
      for (int oc = 0; oc < OC; ++oc) {
        const T* go_vol = go + (static_cast<std::int64_t>(n) * OC + oc) * out_cs;
        for (int ic = 0; ic < IC; ++ic) {
          const T* in_vol = in + (static_cast<std::int64_t>(n) * IC + ic) * in_cs;
          T* gw_vol = gw + ((static_cast<std::int64_t>(oc) * IC + ic) * s.kt) * s.kh * s.kw;
          for (int kt = 0; kt < s.kt; ++kt) {
            const int ot0 = std::max(0, ceil_div(s.pt - kt, s.st));
            const int ot1 = std::min(OT, floor_div(IT - 1 - kt + s.pt, s.st) + 1);
            for (int kh = 0; kh < s.kh; ++kh) {
              const int oh0 = std::max(0, ceil_div(s.ph - kh, s.sh));
              const int oh1 = std::min(OH, floor_div(IH - 1 - kh + s.ph, s.sh) + 1);
              for (int kw = 0; kw < s.kw; ++kw) {
                T acc = T(0);
                for (int ot = ot0; ot < ot1; ++ot) {
                  const int it = ot * s.st + kt - s.pt;
                  for (int oh = oh0; oh < oh1; ++oh) {
                    const int ih = oh * s.sh + kh - s.ph;
                    const T* in_row = in_vol + (static_cast<std::int64_t>(it) * IH + ih) * IW;
                    const T* go_row = go_vol + (static_cast<std::int64_t>(ot) * OH + oh) * OW;
                    if (s.sw == 1) {
                      const int ow0 = std::max(0, s.pw - kw);
                      const int ow1 = std::min(OW, IW - kw + s.pw);
                      const T* src = in_row + kw - s.pw;
                      for (int ow = ow0; ow < ow1; ++ow) acc += go_row[ow] * src[ow];
                    } else {
                      for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * s.sw + kw - s.pw;
                        if (iw >= 0 && iw < IW) acc += go_row[ow] * in_row[iw];
                      }
                    }
                  }
                }
                gw_vol[(kt * s.kh + kh) * s.kw + kw] += acc;
              }
            }
          }
        }
      }
    }
  }

  if (grad_input) {
    T* gi = grad_input->data();
    for (int n = 0; n < N; ++n) {
      for (int oc = 0; oc < OC; ++oc) {
        const T* go_vol = go + (static_cast<std::int64_t>(n) * OC + oc) * out_cs;
        for (int ic = 0; ic < IC; ++ic) {
          T* gi_vol = gi + (static_cast<std::int64_t>(n) * IC + ic) * in_cs;
          const T* w_vol =
              w + ((static_cast<std::int64_t>(oc) * IC + ic) * s.kt) * s.kh * s.kw;
          for (int kt = 0; kt < s.kt; ++kt) {
            const int ot0 = std::max(0, ceil_div(s.pt - kt, s.st));
            const int ot1 = std::min(OT, floor_div(IT - 1 - kt + s.pt, s.st) + 1);
            for (int kh = 0; kh < s.kh; ++kh) {
              const int oh0 = std::max(0, ceil_div(s.ph - kh, s.sh));
              const int oh1 = std::min(OH, floor_div(IH - 1 - kh + s.ph, s.sh) + 1);
              for (int kw = 0; kw < s.kw; ++kw) {
                const T wv = w_vol[(kt * s.kh + kh) * s.kw + kw];
                for (int ot = ot0; ot < ot1; ++ot) {
                  const int it = ot * s.st + kt - s.pt;
                  for (int oh = oh0; oh < oh1; ++oh) {
                    const int ih = oh * s.sh + kh - s.ph;
                    T* gi_row = gi_vol + (static_cast<std::int64_t>(it) * IH + ih) * IW;
                    const T* go_row = go_vol + (static_cast<std::int64_t>(ot) * OH + oh) * OW;
                    if (s.sw == 1) {
                      const int ow0 = std::max(0, s.pw - kw);
                      const int ow1 = std::min(OW, IW - kw + s.pw);
                      T* dst = gi_row + kw - s.pw;
                      for (int ow = ow0; ow < ow1; ++ow) dst[ow] += wv * go_row[ow];
                    } else {
                      for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * s.sw + kw - s.pw;
                        if (iw >= 0 && iw < IW) gi_row[iw] += wv * go_row[ow];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool2d_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                        TensorT<T>* grad_input) {
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int OH = H / 2, OW = W / 2;
  const T* go = grad_out.data();
  const T* in = input.data();
  T* gi = grad_input->data();
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = in + static_cast<std::int64_t>(nc) * H * W;
    T* gplane = gi + static_cast<std::int64_t>(nc) * H * W;
    const T* go_plane = go + static_cast<std::int64_t>(nc) * OH * OW;
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        const std::int64_t base = (2 * oh) * static_cast<std::int64_t>(W) + 2 * ow;
        // first max wins ties, fixed scan order
        std::int64_t arg = base;
        T m = plane[base];
        if (plane[base + 1] > m) { m = plane[base + 1]; arg = base + 1; }
        if (plane[base + W] > m) { m = plane[base + W]; arg = base + W; }
        if (plane[base + W + 1] > m) { arg = base + W + 1; }
        gplane[arg] += go_plane[oh * OW + ow];
      }
    }
  }
}

template <typename T>
void leaky_relu_backward(const TensorT<T>& grad_out, const TensorT<T>& input, T slope,
                         TensorT<T>* grad_input) {
  const T* go = grad_out.data();
  const T* x = input.data();
  T* gi = grad_input->data();
  for (std::int64_t i = 0; i < input.size(); ++i)
    gi[i] += x[i] >= T(0) ? go[i] : slope * go[i];
}

template <typename T>
void logistic_backward(const TensorT<T>& grad_out, const TensorT<T>& output,
                       TensorT<T>* grad_input) {
  const T* go = grad_out.data();
  const T* y = output.data();
  T* gi = grad_input->data();
  for (std::int64_t i = 0; i < output.size(); ++i) gi[i] += go[i] * y[i] * (T(1) - y[i]);
}

template <typename T>
void channel_norm_backward(const TensorT<T>& grad_out, const TensorT<T>& input,
                           const TensorT<T>& scale, const NormCacheT<T>& cache,
                           TensorT<T>* grad_input, TensorT<T>* grad_scale,
                           TensorT<T>* grad_shift) {
  const int N = input.dim(0);
  const int C = input.dim(1);
  std::int64_t S = 1;
  for (int a = 2; a < input.rank(); ++a) S *= input.dim(a);
  const T M = static_cast<T>(static_cast<std::int64_t>(N) * S);
  const T* x = input.data();
  const T* go = grad_out.data();

  for (int c = 0; c < C; ++c) {
    const T mu = cache.mean[c], is = cache.inv_std[c], g = scale[c];
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (int n = 0; n < N; ++n) {
      const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * S;
      for (std::int64_t i = 0; i < S; ++i) {
        const T dy = go[off + i];
        sum_dy += dy;
        sum_dy_xhat += dy * (x[off + i] - mu) * is;
      }
    }
    if (grad_shift) (*grad_shift)[c] += sum_dy;
    if (grad_scale) (*grad_scale)[c] += sum_dy_xhat;
    if (grad_input) {
      T* gi = grad_input->data();
      const T mean_dy = sum_dy / M;
      const T mean_dy_xhat = sum_dy_xhat / M;
      for (int n = 0; n < N; ++n) {
        const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * S;
        for (std::int64_t i = 0; i < S; ++i) {
          const T xhat = (x[off + i] - mu) * is;
          gi[off + i] += g * is * (go[off + i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
  }
}

#define DETNET_INSTANTIATE_OPS(T)                                                        \
  template TensorT<T> conv2d_forward<T>(const TensorT<T>&, const LayerParamsT<T>&,       \
                                        const ConvSpec&);                                \
  template TensorT<T> conv3d_forward<T>(const TensorT<T>&, const LayerParamsT<T>&,       \
                                        const ConvSpec&);                                \
  template TensorT<T> maxpool2d<T>(const TensorT<T>&);                                   \
  template TensorT<T> leaky_relu<T>(const TensorT<T>&, T);                               \
  template TensorT<T> logistic<T>(const TensorT<T>&);                                    \
  template T logistic_scalar<T>(T);                                                      \
  template TensorT<T> channel_norm<T>(const TensorT<T>&, LayerParamsT<T>&, NormMode, T,  \
                                      T, NormCacheT<T>*);                                \
  template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                   const TensorT<T>&, const ConvSpec&, TensorT<T>*,      \
                                   TensorT<T>*, TensorT<T>*);                            \
  template void conv3d_backward<T>(const TensorT<T>&, const TensorT<T>&,                 \
                                   const TensorT<T>&, const ConvSpec&, TensorT<T>*,      \
                                   TensorT<T>*, TensorT<T>*);                            \
  template void maxpool2d_backward<T>(const TensorT<T>&, const TensorT<T>&,              \
                                      TensorT<T>*);                                      \
  template void leaky_relu_backward<T>(const TensorT<T>&, const TensorT<T>&, T,          \
                                       TensorT<T>*);                                     \
  template void logistic_backward<T>(const TensorT<T>&, const TensorT<T>&, TensorT<T>*); \
  template void channel_norm_backward<T>(const TensorT<T>&, const TensorT<T>&,           \
                                         const TensorT<T>&, const NormCacheT<T>&,        \
                                         TensorT<T>*, TensorT<T>*, TensorT<T>*);

DETNET_INSTANTIATE_OPS(float)
DETNET_INSTANTIATE_OPS(double)

}  // namespace detnet
