#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "detnet/geometry.hpp"
#include "detnet/tensor.hpp"

namespace detnet {

struct FocalConfig {
    float gamma = 2.f;  // focusing exponent; 0 recovers plain cross-entropy
    float alpha = 1.f;  // balance weight in (0,1]
    void validate() const;
};

// How the objectness target for positive slots is produced.
enum class ObjectnessTarget {
    kDecodedIoU,  // IoU(decoded prediction, gt), recomputed per call,
                  // treated as a constant for gradients
    kStatic,      // the per-slot value stored in the TargetGrid (1.0 by
                  // default from build_targets)
};

struct LossConfig {
    float lambda = 1.f;         // balance factor on the coordinate term
    FocalConfig focal;
    float noobj_weight = 0.5f;  // down-weight on negative objectness
    bool smooth_l1_halved = false;  // select the continuous 0.5x^2 branch
    bool focal_objectness = true;   // off: plain CE on the objectness term
    bool focal_class = true;        // off: plain CE on the class term
    ObjectnessTarget objectness_target = ObjectnessTarget::kDecodedIoU;
    void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& cfg);
void from_json(const nlohmann::json& j, LossConfig& cfg);

// -alpha * (1-p)^gamma * ln(p) with p clamped to [1e-7, 1-1e-7].
double focal_loss(double p_t, const FocalConfig& cfg);

// Piecewise regression loss. Quadratic branch applies strictly on |x| < 1
// and is x^2 by default (note the 0.5 jump against the linear |x| - 0.5
// branch at |x| = 1); halved=true selects the continuous 0.5 x^2 form.
double smooth_l1(double x, bool halved = false);

// Per-image training targets for a [K*(5+C), H, W] prediction grid.
// Slot index = (cy * grid_w + cx) * num_anchors + a.
struct TargetGrid {
    int grid_w = 0;
    int grid_h = 0;
    int num_anchors = 0;
    int num_classes = 0;
    float stride = 0.f;
    std::vector<AnchorPrior> anchors;  // cell units

    std::vector<uint8_t> positive;   // mask, one entry per slot
    std::vector<float> objectness;   // target in [0,1]; 1.0 at positives
    std::vector<RawBox> reg_target;  // valid where positive
    std::vector<int> class_id;       // valid where positive
    std::vector<Box> gt_box;         // pixel-space gt behind each positive
    int num_positive = 0;
    std::vector<int> dropped;        // gt indices that found no free slot

    int64_t slot(int cx, int cy, int a) const {
        return (static_cast<int64_t>(cy) * grid_w + cx) * num_anchors + a;
    }
};

// Runs responsible-predictor assignment and encodes each assigned gt into
// its slot: regression target from the box/prior geometry, class id, and a
// static objectness target of 1. Everything else is a negative.
TargetGrid build_targets(const std::vector<GroundTruth>& gts, int grid_w,
                         int grid_h, const std::vector<AnchorPrior>& anchors,
                         int num_classes, float stride);

template <typename T>
struct LossResultT {
    double total = 0.0;
    double regression = 0.0;
    double objectness = 0.0;
    double classification = 0.0;
    int num_positive = 0;
    TensorT<T> grad;  // dL/draw, same shape as the input grid

    LossResultT() : grad(std::vector<int>{1}, std::vector<T>{T(0)}) {}
};

// Multi-part objective over a batch of head outputs [N, K*(5+C), H, W]:
//   lambda * sum_{positives} sum_{coord} smooth_l1(pred - target)
//       / max(1, total positives)
//   + objectness term over every slot (positives against their soft target,
//     negatives against 0, scaled by noobj_weight)
//   + per-class-probability term at positives,
// the whole sum divided by the batch size. Gradients are analytic; a
// decoded-IoU objectness target is differentiated as a constant.
template <typename T>
LossResultT<T> multi_part_loss(const TensorT<T>& raw,
                               const std::vector<TargetGrid>& targets,
                               const LossConfig& cfg);

using LossResult = LossResultT<float>;

}  // namespace detnet
