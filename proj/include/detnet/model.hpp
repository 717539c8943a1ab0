#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "detnet/autograd.hpp"
#include "detnet/geometry.hpp"
#include "detnet/tensor.hpp"

namespace detnet {

struct BackboneBlock {
    int channels = 0;
    int kernel = 3;     // 1 or 3
    bool pool = false;  // 2x2 maxpool after the block
};

struct TemporalLayer {
    int kt = 3;   // temporal kernel extent
    int khw = 3;  // spatial kernel extent (1 or 3)
    int pt = 0;   // temporal padding
};

struct ModelConfig {
    int frames = 3;
    int height = 64;
    int width = 64;
    int in_channels = 3;
    std::vector<BackboneBlock> backbone = {
        {16, 3, true}, {32, 3, true}, {64, 3, true}, {64, 3, false}};
    // Collapses T=3 to 1: pads (1, 0, 0) with extents (3, 1, 3).
    std::vector<TemporalLayer> temporal = {{3, 3, 1}, {1, 1, 0}, {3, 3, 0}};
    int temporal_channels = 0;  // 0 -> same as the last backbone block
    int head_channels = 128;
    int num_anchors = 5;
    int num_classes = 1;
    bool norm = true;  // per-channel normalization inside conv blocks
    float norm_momentum = 0.1f;
    float leaky_slope = 0.1f;
    // When true the temporal stage is an equal-parameter 2D stack applied to
    // the reference frame only; neighbor frames are ignored entirely.
    bool baseline_2d = false;
    std::vector<AnchorPrior> anchors;  // cell units; must have num_anchors
                                       // entries before predict/train

    int stride() const;
    int backbone_out_channels() const;
    int fused_channels() const;  // temporal stage output width
    int reference_frame() const { return frames / 2; }
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// The backbone used at paper scale: 18 conv layers + 5 pools (the classifier
// conv removed), stride 32.
std::vector<BackboneBlock> darknet_conv23_blocks();

// One conv layer plus its optional normalization affine.
template <typename T>
struct ConvBlockT {
    ConvSpec spec;
    TensorT<T> weight;
    TensorT<T> bias;
    bool has_norm = false;
    bool has_act = true;
    bool pool = false;
    TensorT<T> scale, shift, running_mean, running_var;
};

template <typename T>
struct ParamRefT {
    std::string name;
    TensorT<T>* tensor;
    bool decay;  // weight decay applies to conv weights only
};

template <typename T>
struct ForwardIdsT {
    typename TapeT<T>::Id input = -1;
    typename TapeT<T>::Id head = -1;
    std::vector<typename TapeT<T>::Id> param_ids;  // aligned with params()
};

// Frame stack [N, T, 3, H, W] -> prediction grid [N, K*(5+C), H/s, W/s].
// Backbone runs per frame with shared weights; the temporal stage fuses the
// stacked features down to one frame (or, in baseline_2d mode, reads only
// the reference frame); the head is two 3x3 convs plus a linear 1x1.
template <typename T>
class DetNetT {
  public:
    static DetNetT build(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }

    // Trainable parameters in a stable order (+ `decay` flags).
    std::vector<ParamRefT<T>> params();
    // params() plus normalization running stats; the checkpoint order.
    std::vector<ParamRefT<T>> state_tensors();
    std::int64_t param_count();

    // Records the full forward on the tape. `input` must be [N, T, 3, H, W].
    ForwardIdsT<T> forward(TapeT<T>& tape, const TensorT<T>& input,
                           NormMode mode);

    // Convenience: forward in infer mode, returning the head output.
    TensorT<T> infer(const TensorT<T>& input);

    // infer + decode + nms per batch item, in reference-frame pixels.
    std::vector<std::vector<Detection>> predict(const TensorT<T>& input,
                                                float score_thresh,
                                                float nms_thresh);

    template <typename U>
    DetNetT<U> cast() const;

    std::vector<ConvBlockT<T>> backbone;
    std::vector<ConvBlockT<T>> temporal;  // 3D stack, or 2D stack in baseline
    std::vector<ConvBlockT<T>> head;

  private:
    ModelConfig cfg_;
    std::uint64_t seed_ = 0;

    template <typename U>
    friend class DetNetT;
};

using DetNet = DetNetT<float>;

template <typename T>
template <typename U>
DetNetT<U> DetNetT<T>::cast() const {
    DetNetT<U> out;
    out.cfg_ = cfg_;
    out.seed_ = seed_;
    auto conv_block = [](const ConvBlockT<T>& b) {
        ConvBlockT<U> o;
        o.spec = b.spec;
        o.weight = b.weight.template cast<U>();
        o.bias = b.bias.template cast<U>();
        o.has_norm = b.has_norm;
        o.has_act = b.has_act;
        o.pool = b.pool;
        if (b.has_norm) {
            o.scale = b.scale.template cast<U>();
            o.shift = b.shift.template cast<U>();
            o.running_mean = b.running_mean.template cast<U>();
            o.running_var = b.running_var.template cast<U>();
        }
        return o;
    };
    for (const auto& b : backbone) out.backbone.push_back(conv_block(b));
    for (const auto& b : temporal) out.temporal.push_back(conv_block(b));
    for (const auto& b : head) out.head.push_back(conv_block(b));
    return out;
}

}  // namespace detnet
