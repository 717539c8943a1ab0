#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "detnet/geometry.hpp"

namespace detnet {

// One evaluated frame: what the model said and what was really there.
struct EvalFrame {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    std::string scenario = "";
};

struct PrPoint {
    float recall = 0.f;
    float precision = 0.f;
    float score = 0.f;
};

struct EvalReport {
    float map = 0.f;
    std::vector<float> per_class_ap;
    std::vector<std::vector<PrPoint>> pr_curves;  // one sweep per class
    std::map<std::string, float> per_scenario;    // scenario tag -> mAP
    float iou_threshold = 0.5f;
    std::int64_t tp = 0, fp = 0, fn = 0;

    nlohmann::json to_json() const;
};

// PASCAL-style evaluation. Detections are matched per class in descending
// score order; each one takes the unmatched same-frame gt with the highest
// IoU, provided that IoU >= iou_threshold, else it counts as a false
// positive (duplicates on a matched gt included). AP is the area under the
// monotone-envelope precision/recall curve (all-point interpolation), or the
// 11-point average when eleven_point is set. A class with no gts scores 1.0
// with no detections and 0.0 otherwise.
EvalReport evaluate_map(const std::vector<EvalFrame>& frames, int num_classes,
                        float iou_threshold, bool eleven_point = false);

// AP from a single class's matched sweep; exposed for the curve tests.
float average_precision(const std::vector<PrPoint>& curve, bool eleven_point);

}  // namespace detnet
