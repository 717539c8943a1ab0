#pragma once

#include <vector>

#include "detnet/tensor.hpp"

namespace detnet {

// Center-form box: (x, y) is the center, (w, h) the full extents. Pixels.
struct Box {
    float x = 0.f;
    float y = 0.f;
    float w = 0.f;
    float h = 0.f;
};

struct Detection {
    Box box;
    float score = 0.f;
    int class_id = 0;
};

struct GroundTruth {
    Box box;
    int class_id = 0;
};

// Prior box shape used by the detection head; width/height in cell units
// (pixels / stride).
struct AnchorPrior {
    float w = 0.f;
    float h = 0.f;
};

// Network-space box parametrisation for one anchor slot.
struct RawBox {
    float tx = 0.f;
    float ty = 0.f;
    float tw = 0.f;
    float th = 0.f;
};

float box_area(const Box& b);
float intersection_area(const Box& a, const Box& b);

// Intersection over union. Boxes with non-positive extents contribute zero
// area; if the union is empty the result is 0.
float iou(const Box& a, const Box& b);

// IoU of two shapes compared as if co-centered (position ignored).
float shape_iou(float aw, float ah, float bw, float bh);

// Grid cell that owns a pixel coordinate.
int cell_index(float coord, float stride);

// Offsets -> pixel box. The center lands inside cell (cell_x, cell_y) at a
// fractional position given by the squashed tx/ty; extents scale the prior
// exponentially. Cell-unit results are converted to pixels via stride.
Box decode_box(const RawBox& t, int cell_x, int cell_y, float stride,
               const AnchorPrior& prior);

// Exact inverse of decode_box for boxes whose center lies in the given cell.
// The in-cell offset is clamped to [1e-4, 1 - 1e-4] before the logit so
// centers sitting on a cell border stay finite.
RawBox encode_box(const Box& b, int cell_x, int cell_y, float stride,
                  const AnchorPrior& prior);

// Head layout: [N, K*(5+C), H, W]; per anchor k the channel block is
// (tx, ty, tw, th, tobj, class logits...). Returns detections for one batch
// item whose objectness clears score_threshold. Detection score is the
// squashed objectness; class is the argmax class logit.
std::vector<Detection> decode_grid(const Tensor& head, int batch_index,
                                   const std::vector<AnchorPrior>& anchors,
                                   int num_classes, float stride,
                                   float score_threshold);

// Greedy same-class suppression. Boxes below score_threshold are dropped
// first; the rest are visited in descending score order (ties: lower original
// index first) and a candidate survives iff its IoU with every previously
// kept box of the same class is strictly below iou_threshold.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           float iou_threshold, float score_threshold = 0.f);

}  // namespace detnet
