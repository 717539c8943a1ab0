#include "detnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "detnet/errors.hpp"

namespace detnet {

float box_area(const Box& b) {
    if (b.w <= 0.f || b.h <= 0.f) return 0.f;
    return b.w * b.h;
}

float intersection_area(const Box& a, const Box& b) {
    float ax0 = a.x - 0.5f * a.w, ax1 = a.x + 0.5f * a.w;
    float ay0 = a.y - 0.5f * a.h, ay1 = a.y + 0.5f * a.h;
    float bx0 = b.x - 0.5f * b.w, bx1 = b.x + 0.5f * b.w;
    float by0 = b.y - 0.5f * b.h, by1 = b.y + 0.5f * b.h;
    float iw = std::min(ax1, bx1) - std::max(ax0, bx0);
    float ih = std::min(ay1, by1) - std::max(ay0, by0);
    if (iw <= 0.f || ih <= 0.f) return 0.f;
    return iw * ih;
}

float iou(const Box& a, const Box& b) {
    float area_a = box_area(a);
    float area_b = box_area(b);
    if (area_a <= 0.f && area_b <= 0.f) return 0.f;
    float inter = (area_a > 0.f && area_b > 0.f) ? intersection_area(a, b) : 0.f;
    float uni = area_a + area_b - inter;
    if (uni <= 0.f) return 0.f;
    return inter / uni;
}

float shape_iou(float aw, float ah, float bw, float bh) {
    Box a{0.f, 0.f, aw, ah};
    Box b{0.f, 0.f, bw, bh};
    return iou(a, b);
}

int cell_index(float coord, float stride) {
    DETNET_CHECK_T(stride > 0.f, config_error, "stride must be positive");
    return static_cast<int>(std::floor(coord / stride));
}

static float sigmoidf(float v) { return 1.f / (1.f + std::exp(-v)); }

Box decode_box(const RawBox& t, int cell_x, int cell_y, float stride,
               const AnchorPrior& prior) {
    Box b;
    b.x = (sigmoidf(t.tx) + static_cast<float>(cell_x)) * stride;
    b.y = (sigmoidf(t.ty) + static_cast<float>(cell_y)) * stride;
    b.w = prior.w * std::exp(t.tw) * stride;
    b.h = prior.h * std::exp(t.th) * stride;
    return b;
}

RawBox encode_box(const Box& b, int cell_x, int cell_y, float stride,
                  const AnchorPrior& prior) {
    DETNET_CHECK_T(b.w > 0.f && b.h > 0.f, data_error,
                   "cannot encode a box with non-positive extents");
    DETNET_CHECK_T(prior.w > 0.f && prior.h > 0.f, data_error,
                   "anchor prior must have positive extents");
    auto offset = [&](float coord, int cell) {
        float o = coord / stride - static_cast<float>(cell);
        o = std::min(std::max(o, 1e-4f), 1.f - 1e-4f);
        return std::log(o / (1.f - o));
    };
    RawBox t;
    t.tx = offset(b.x, cell_x);
    t.ty = offset(b.y, cell_y);
    t.tw = std::log(b.w / (prior.w * stride));
    t.th = std::log(b.h / (prior.h * stride));
    return t;
}

std::vector<Detection> decode_grid(const Tensor& head, int batch_index,
                                   const std::vector<AnchorPrior>& anchors,
                                   int num_classes, float stride,
                                   float score_threshold) {
    DETNET_CHECK_T(head.rank() == 4, shape_error,
                   "decode_grid expects a [N, K*(5+C), H, W] tensor, got "
                       << head.shape_str());
    const int n = head.dim(0), ch = head.dim(1), gh = head.dim(2), gw = head.dim(3);
    const int k = static_cast<int>(anchors.size());
    DETNET_CHECK_T(k > 0, config_error, "decode_grid needs at least one anchor");
    DETNET_CHECK_T(num_classes >= 1, config_error, "num_classes must be >= 1");
    DETNET_CHECK_T(ch == k * (5 + num_classes), shape_error,
                   "head has " << ch << " channels, expected "
                               << k * (5 + num_classes));
    DETNET_CHECK_T(batch_index >= 0 && batch_index < n, shape_error,
                   "batch index " << batch_index << " out of range for N=" << n);

    const int slot = 5 + num_classes;
    const int64_t plane = static_cast<int64_t>(gh) * gw;
    const float* base = head.data() + static_cast<int64_t>(batch_index) * ch * plane;

    std::vector<Detection> out;
    for (int a = 0; a < k; ++a) {
        const float* tx = base + static_cast<int64_t>(a * slot + 0) * plane;
        const float* ty = base + static_cast<int64_t>(a * slot + 1) * plane;
        const float* tw = base + static_cast<int64_t>(a * slot + 2) * plane;
        const float* th = base + static_cast<int64_t>(a * slot + 3) * plane;
        const float* to = base + static_cast<int64_t>(a * slot + 4) * plane;
        for (int cy = 0; cy < gh; ++cy) {
            for (int cx = 0; cx < gw; ++cx) {
                int64_t p = static_cast<int64_t>(cy) * gw + cx;
                float score = sigmoidf(to[p]);
                if (score < score_threshold) continue;
                Detection det;
                det.box = decode_box(RawBox{tx[p], ty[p], tw[p], th[p]}, cx, cy,
                                     stride, anchors[static_cast<size_t>(a)]);
                det.score = score;
                int best = 0;
                float best_logit = base[(static_cast<int64_t>(a * slot + 5)) * plane + p];
                for (int c = 1; c < num_classes; ++c) {
                    float v = base[(static_cast<int64_t>(a * slot + 5 + c)) * plane + p];
                    if (v > best_logit) {
                        best_logit = v;
                        best = c;
                    }
                }
                det.class_id = best;
                out.push_back(det);
            }
        }
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           float iou_threshold, float score_threshold) {
    std::vector<size_t> order(dets.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return dets[a].score > dets[b].score;
    });
    std::vector<Detection> kept;
    for (size_t idx : order) {
        const Detection& cand = dets[idx];
        if (cand.score < score_threshold) continue;
        bool keep = true;
        for (const Detection& k : kept) {
            if (k.class_id != cand.class_id) continue;
            if (iou(k.box, cand.box) >= iou_threshold) {
                keep = false;
                break;
            }
        }
        if (keep) kept.push_back(cand);
    }
    return kept;
}

}  // namespace detnet
