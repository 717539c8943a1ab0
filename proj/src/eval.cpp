#include "detnet/eval.hpp"

#include <algorithm>
#include <numeric>

#include "detnet/errors.hpp"

namespace detnet {

namespace {

struct ScoredDet {
    float score;
    std::size_t frame;
    std::size_t index;  // within the frame's detection list
};

struct ClassSweep {
    std::vector<PrPoint> curve;
    std::int64_t tp = 0, fp = 0;
    std::int64_t num_gts = 0;
};

ClassSweep sweep_class(const std::vector<EvalFrame>& frames, int cls,
                       float iou_threshold) {
    ClassSweep sw;
    std::vector<ScoredDet> dets;
    for (std::size_t f = 0; f < frames.size(); ++f) {
        for (std::size_t i = 0; i < frames[f].dets.size(); ++i)
            if (frames[f].dets[i].class_id == cls)
                dets.push_back({frames[f].dets[i].score, f, i});
        for (const GroundTruth& g : frames[f].gts)
            if (g.class_id == cls) ++sw.num_gts;
    }
    // descending score; ties keep (frame, index) order
    std::stable_sort(dets.begin(), dets.end(),
                     [](const ScoredDet& a, const ScoredDet& b) {
                         return a.score > b.score;
                     });

    std::vector<std::vector<char>> matched(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f)
        matched[f].assign(frames[f].gts.size(), 0);

    std::int64_t tp = 0, fp = 0;
    for (const ScoredDet& d : dets) {
        const EvalFrame& fr = frames[d.frame];
        const Box& db = fr.dets[d.index].box;
        int best_gt = -1;
        float best_iou = 0.f;
        for (std::size_t g = 0; g < fr.gts.size(); ++g) {
            if (fr.gts[g].class_id != cls || matched[d.frame][g]) continue;
            float v = iou(db, fr.gts[g].box);
            if (v > best_iou) {
                best_iou = v;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            matched[d.frame][static_cast<std::size_t>(best_gt)] = 1;
            ++tp;
        } else {
            ++fp;
        }
        PrPoint p;
        p.recall = sw.num_gts > 0
                       ? static_cast<float>(tp) / static_cast<float>(sw.num_gts)
                       : 0.f;
        p.precision = static_cast<float>(tp) / static_cast<float>(tp + fp);
        p.score = d.score;
        sw.curve.push_back(p);
    }
    sw.tp = tp;
    sw.fp = fp;
    return sw;
}

}  // namespace

float average_precision(const std::vector<PrPoint>& curve, bool eleven_point) {
    if (eleven_point) {
        double acc = 0.0;
        for (int i = 0; i <= 10; ++i) {
            const float r = static_cast<float>(i) / 10.f;
            float best = 0.f;
            for (const PrPoint& p : curve)
                if (p.recall >= r) best = std::max(best, p.precision);
            acc += best;
        }
        return static_cast<float>(acc / 11.0);
    }
    // area under the monotone envelope of the sweep
    std::vector<float> env(curve.size());
    float envelope = 0.f;
    for (std::size_t i = curve.size(); i-- > 0;) {
        envelope = std::max(envelope, curve[i].precision);
        env[i] = envelope;
    }
    double acc = 0.0;
    float prev_recall = 0.f;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        acc += static_cast<double>(curve[i].recall - prev_recall) * env[i];
        prev_recall = curve[i].recall;
    }
    return static_cast<float>(acc);
}

EvalReport evaluate_map(const std::vector<EvalFrame>& frames, int num_classes,
                        float iou_threshold, bool eleven_point) {
    DETNET_CHECK_T(num_classes >= 1, config_error, "num_classes must be >= 1");
    EvalReport rep;
    rep.iou_threshold = iou_threshold;

    std::int64_t total_gts = 0;
    double ap_sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        ClassSweep sw = sweep_class(frames, c, iou_threshold);
        float ap;
        if (sw.num_gts == 0) {
            // documented convention: nothing to find and nothing claimed is a
            // perfect score; hallucinated detections are a zero
            ap = sw.curve.empty() ? 1.f : 0.f;
        } else {
            ap = average_precision(sw.curve, eleven_point);
        }
        rep.per_class_ap.push_back(ap);
        rep.pr_curves.push_back(std::move(sw.curve));
        rep.tp += sw.tp;
        rep.fp += sw.fp;
        total_gts += sw.num_gts;
        ap_sum += ap;
    }
    rep.fn = total_gts - rep.tp;
    rep.map = static_cast<float>(ap_sum / num_classes);

    // per-scenario breakdown, skipped when tags are absent
    std::map<std::string, std::vector<EvalFrame>> groups;
    for (const EvalFrame& f : frames)
        if (!f.scenario.empty()) groups[f.scenario].push_back(f);
    if (groups.size() > 1 ||
        (groups.size() == 1 && groups.begin()->second.size() != frames.size())) {
        for (auto& [tag, sub] : groups)
            rep.per_scenario[tag] =
                evaluate_map(sub, num_classes, iou_threshold, eleven_point).map;
    } else if (groups.size() == 1) {
        rep.per_scenario[groups.begin()->first] = rep.map;
    }
    return rep;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["map"] = map;
    j["iou_threshold"] = iou_threshold;
    j["per_class_ap"] = per_class_ap;
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    j["per_scenario"] = nlohmann::json::object();
    for (const auto& [tag, v] : per_scenario) j["per_scenario"][tag] = v;
    j["pr_curves"] = nlohmann::json::array();
    for (const auto& curve : pr_curves) {
        nlohmann::json c = nlohmann::json::array();
        for (const PrPoint& p : curve)
            c.push_back({{"recall", p.recall},
                         {"precision", p.precision},
                         {"score", p.score}});
        j["pr_curves"].push_back(std::move(c));
    }
    return j;
}

}  // namespace detnet
