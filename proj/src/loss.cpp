#include "detnet/loss.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "detnet/anchors.hpp"
#include "detnet/errors.hpp"

namespace detnet {

void FocalConfig::validate() const {
    DETNET_CHECK_T(gamma >= 0.f, config_error, "focal gamma must be >= 0");
    DETNET_CHECK_T(alpha > 0.f && alpha <= 1.f, config_error,
                   "focal alpha must lie in (0,1]");
}

void LossConfig::validate() const {
    DETNET_CHECK_T(lambda > 0.f, config_error, "loss lambda must be positive");
    DETNET_CHECK_T(noobj_weight >= 0.f, config_error,
                   "noobj_weight must be non-negative");
    focal.validate();
}

void to_json(nlohmann::json& j, const LossConfig& cfg) {
    j = nlohmann::json{
        {"lambda", cfg.lambda},
        {"gamma", cfg.focal.gamma},
        {"alpha", cfg.focal.alpha},
        {"noobj_weight", cfg.noobj_weight},
        {"smooth_l1_halved", cfg.smooth_l1_halved},
        {"focal_objectness", cfg.focal_objectness},
        {"focal_class", cfg.focal_class},
        {"objectness_target",
         cfg.objectness_target == ObjectnessTarget::kDecodedIoU ? "decoded_iou"
                                                                : "static"}};
}

void from_json(const nlohmann::json& j, LossConfig& cfg) {
    const LossConfig defaults;
    cfg.lambda = j.value("lambda", defaults.lambda);
    cfg.focal.gamma = j.value("gamma", defaults.focal.gamma);
    cfg.focal.alpha = j.value("alpha", defaults.focal.alpha);
    cfg.noobj_weight = j.value("noobj_weight", defaults.noobj_weight);
    cfg.smooth_l1_halved = j.value("smooth_l1_halved", defaults.smooth_l1_halved);
    cfg.focal_objectness = j.value("focal_objectness", defaults.focal_objectness);
    cfg.focal_class = j.value("focal_class", defaults.focal_class);
    const std::string mode = j.value("objectness_target", std::string("decoded_iou"));
    if (mode == "decoded_iou") {
        cfg.objectness_target = ObjectnessTarget::kDecodedIoU;
    } else if (mode == "static") {
        cfg.objectness_target = ObjectnessTarget::kStatic;
    } else {
        throw config_error("unknown objectness_target: " + mode);
    }
}

namespace {

constexpr double kProbClamp = 1e-7;

double clamp_p(double p) {
    return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Value and d(value)/dp of the focal terms, evaluated at a clamped p.
struct FTerm {
    double value;
    double dp;
};

// Target 1: -a (1-p)^g ln p.
FTerm focal_pos(double p, double g, double a) {
    double one_m = 1.0 - p;
    double pow_g = std::pow(one_m, g);
    double lp = std::log(p);
    FTerm f;
    f.value = -a * pow_g * lp;
    f.dp = -a * pow_g / p;
    if (g > 0.0) f.dp += a * g * std::pow(one_m, g - 1.0) * lp;
    return f;
}

// Target 0 (p_t = 1-p): -a p^g ln(1-p).
FTerm focal_neg(double p, double g, double a) {
    double pow_g = std::pow(p, g);
    double lq = std::log(1.0 - p);
    FTerm f;
    f.value = -a * pow_g * lq;
    f.dp = a * pow_g / (1.0 - p);
    if (g > 0.0) f.dp += -a * g * std::pow(p, g - 1.0) * lq;
    return f;
}

// Soft target q in [0,1]: a (1-p)^g [ -q ln p - (1-q) ln(1-p) ].
// Collapses to focal_pos at q = 1.
FTerm focal_soft(double p, double q, double g, double a) {
    double one_m = 1.0 - p;
    double pow_g = std::pow(one_m, g);
    double bce = -q * std::log(p) - (1.0 - q) * std::log(one_m);
    double dbce = -q / p + (1.0 - q) / one_m;
    FTerm f;
    f.value = a * pow_g * bce;
    f.dp = a * pow_g * dbce;
    if (g > 0.0) f.dp += -a * g * std::pow(one_m, g - 1.0) * bce;
    return f;
}

double smooth_l1_grad(double x, bool halved) {
    if (std::abs(x) < 1.0) return halved ? x : 2.0 * x;
    return x > 0.0 ? 1.0 : -1.0;
}

double iou_d(double ax, double ay, double aw, double ah, double bx, double by,
             double bw, double bh) {
    if (aw <= 0.0 || ah <= 0.0 || bw <= 0.0 || bh <= 0.0) return 0.0;
    double iw = std::min(ax + 0.5 * aw, bx + 0.5 * bw) -
                std::max(ax - 0.5 * aw, bx - 0.5 * bw);
    double ih = std::min(ay + 0.5 * ah, by + 0.5 * bh) -
                std::max(ay - 0.5 * ah, by - 0.5 * bh);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    double inter = iw * ih;
    double uni = aw * ah + bw * bh - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

}  // namespace

double focal_loss(double p_t, const FocalConfig& cfg) {
    assert(p_t > 0.0 && p_t < 1.0);
    double p = clamp_p(p_t);
    return -static_cast<double>(cfg.alpha) *
           std::pow(1.0 - p, static_cast<double>(cfg.gamma)) * std::log(p);
}

double smooth_l1(double x, bool halved) {
    double ax = std::abs(x);
    if (ax < 1.0) return halved ? 0.5 * x * x : x * x;
    return ax - 0.5;
}

TargetGrid build_targets(const std::vector<GroundTruth>& gts, int grid_w,
                         int grid_h, const std::vector<AnchorPrior>& anchors,
                         int num_classes, float stride) {
    DETNET_CHECK_T(num_classes >= 1, config_error, "num_classes must be >= 1");
    TargetGrid tg;
    tg.grid_w = grid_w;
    tg.grid_h = grid_h;
    tg.num_anchors = static_cast<int>(anchors.size());
    tg.num_classes = num_classes;
    tg.stride = stride;
    tg.anchors = anchors;
    size_t n_slots = static_cast<size_t>(grid_w) * grid_h * anchors.size();
    tg.positive.assign(n_slots, 0);
    tg.objectness.assign(n_slots, 0.f);
    tg.reg_target.assign(n_slots, RawBox{});
    tg.class_id.assign(n_slots, 0);
    tg.gt_box.assign(n_slots, Box{});

    AssignmentResult assigned =
        assign_responsible(gts, anchors, grid_w, grid_h, stride);
    tg.dropped = assigned.dropped;
    for (const Assignment& as : assigned.assignments) {
        const GroundTruth& gt = gts[static_cast<size_t>(as.gt_index)];
        DETNET_CHECK_T(gt.class_id >= 0 && gt.class_id < num_classes, data_error,
                       "gt class " << gt.class_id << " out of range (C="
                                   << num_classes << ")");
        int64_t s = tg.slot(as.cell_x, as.cell_y, as.anchor);
        tg.positive[static_cast<size_t>(s)] = 1;
        tg.objectness[static_cast<size_t>(s)] = 1.f;
        RawBox t = encode_box(gt.box, as.cell_x, as.cell_y, stride,
                              anchors[static_cast<size_t>(as.anchor)]);
        DETNET_CHECK_T(std::isfinite(t.tx) && std::isfinite(t.ty) &&
                           std::isfinite(t.tw) && std::isfinite(t.th),
                       numeric_error, "non-finite regression target");
        tg.reg_target[static_cast<size_t>(s)] = t;
        tg.class_id[static_cast<size_t>(s)] = gt.class_id;
        tg.gt_box[static_cast<size_t>(s)] = gt.box;
        ++tg.num_positive;
    }
    return tg;
}

template <typename T>
LossResultT<T> multi_part_loss(const TensorT<T>& raw,
                               const std::vector<TargetGrid>& targets,
                               const LossConfig& cfg) {
    cfg.validate();
    DETNET_CHECK_T(raw.rank() == 4, shape_error,
                   "loss expects [N, K*(5+C), H, W], got " << raw.shape_str());
    const int n = raw.dim(0), ch = raw.dim(1), gh = raw.dim(2), gw = raw.dim(3);
    DETNET_CHECK_T(static_cast<int>(targets.size()) == n, shape_error,
                   "got " << targets.size() << " target grids for batch " << n);

    LossResultT<T> res;
    res.grad = TensorT<T>(raw.shape());

    int total_pos = 0;
    for (const TargetGrid& tg : targets) total_pos += tg.num_positive;
    res.num_positive = total_pos;

    const double inv_n = 1.0 / n;
    const double reg_w =
        static_cast<double>(cfg.lambda) / std::max(1, total_pos) * inv_n;
    const double g_obj = cfg.focal_objectness ? cfg.focal.gamma : 0.0;
    const double a_obj = cfg.focal_objectness ? cfg.focal.alpha : 1.0;
    const double g_cls = cfg.focal_class ? cfg.focal.gamma : 0.0;
    const double a_cls = cfg.focal_class ? cfg.focal.alpha : 1.0;

    double reg_sum = 0.0, obj_sum = 0.0, cls_sum = 0.0;
    const int64_t plane = static_cast<int64_t>(gh) * gw;

    for (int i = 0; i < n; ++i) {
        const TargetGrid& tg = targets[static_cast<size_t>(i)];
        DETNET_CHECK_T(tg.grid_w == gw && tg.grid_h == gh, shape_error,
                       "target grid " << tg.grid_w << "x" << tg.grid_h
                                      << " vs head " << gw << "x" << gh);
        const int k = tg.num_anchors, c = tg.num_classes;
        const int slot_ch = 5 + c;
        DETNET_CHECK_T(ch == k * slot_ch, shape_error,
                       "head has " << ch << " channels, targets expect "
                                   << k * slot_ch);
        const T* base = raw.data() + static_cast<int64_t>(i) * ch * plane;
        T* gbase = res.grad.data() + static_cast<int64_t>(i) * ch * plane;
        for (int a = 0; a < k; ++a) {
            const int64_t coff = static_cast<int64_t>(a) * slot_ch * plane;
            for (int cy = 0; cy < gh; ++cy) {
                for (int cx = 0; cx < gw; ++cx) {
                    const int64_t p = static_cast<int64_t>(cy) * gw + cx;
                    const int64_t s = tg.slot(cx, cy, a);
                    double tobj = static_cast<double>(base[coff + 4 * plane + p]);
                    double po = sigmoid_d(tobj);
                    double pc = clamp_p(po);
                    if (tg.positive[static_cast<size_t>(s)]) {
                        // coordinate regression
                        const RawBox& tt = tg.reg_target[static_cast<size_t>(s)];
                        const double tv[4] = {tt.tx, tt.ty, tt.tw, tt.th};
                        for (int j = 0; j < 4; ++j) {
                            double pred =
                                static_cast<double>(base[coff + j * plane + p]);
                            double x = pred - tv[j];
                            reg_sum += smooth_l1(x, cfg.smooth_l1_halved);
                            gbase[coff + j * plane + p] += static_cast<T>(
                                smooth_l1_grad(x, cfg.smooth_l1_halved) * reg_w);
                        }
                        // objectness against its (constant) soft target
                        double q;
                        if (cfg.objectness_target == ObjectnessTarget::kDecodedIoU) {
                            double tx = static_cast<double>(base[coff + 0 * plane + p]);
                            double ty = static_cast<double>(base[coff + 1 * plane + p]);
                            double tw = static_cast<double>(base[coff + 2 * plane + p]);
                            double th = static_cast<double>(base[coff + 3 * plane + p]);
                            const AnchorPrior& pr = tg.anchors[static_cast<size_t>(a)];
                            double st = tg.stride;
                            double bx = (sigmoid_d(tx) + cx) * st;
                            double by = (sigmoid_d(ty) + cy) * st;
                            double bw = pr.w * std::exp(tw) * st;
                            double bh = pr.h * std::exp(th) * st;
                            const Box& gt = tg.gt_box[static_cast<size_t>(s)];
                            q = iou_d(bx, by, bw, bh, gt.x, gt.y, gt.w, gt.h);
                        } else {
                            q = static_cast<double>(
                                tg.objectness[static_cast<size_t>(s)]);
                        }
                        FTerm f = focal_soft(pc, q, g_obj, a_obj);
                        obj_sum += f.value;
                        gbase[coff + 4 * plane + p] +=
                            static_cast<T>(f.dp * po * (1.0 - po) * inv_n);
                        // per-class probabilities, one-vs-rest
                        int cls = tg.class_id[static_cast<size_t>(s)];
                        for (int cc = 0; cc < c; ++cc) {
                            double logit = static_cast<double>(
                                base[coff + (5 + cc) * plane + p]);
                            double pp = sigmoid_d(logit);
                            double ppc = clamp_p(pp);
                            FTerm fc = (cc == cls) ? focal_pos(ppc, g_cls, a_cls)
                                                   : focal_neg(ppc, g_cls, a_cls);
                            cls_sum += fc.value;
                            gbase[coff + (5 + cc) * plane + p] +=
                                static_cast<T>(fc.dp * pp * (1.0 - pp) * inv_n);
                        }
                    } else {
                        FTerm f = focal_neg(pc, g_obj, a_obj);
                        double w = static_cast<double>(cfg.noobj_weight);
                        obj_sum += w * f.value;
                        gbase[coff + 4 * plane + p] +=
                            static_cast<T>(w * f.dp * po * (1.0 - po) * inv_n);
                    }
                }
            }
        }
    }

    res.regression =
        static_cast<double>(cfg.lambda) * reg_sum / std::max(1, total_pos) * inv_n;
    res.objectness = obj_sum * inv_n;
    res.classification = cls_sum * inv_n;
    res.total = res.regression + res.objectness + res.classification;
    return res;
}

template LossResultT<float> multi_part_loss<float>(const TensorT<float>&,
                                                   const std::vector<TargetGrid>&,
                                                   const LossConfig&);
template LossResultT<double> multi_part_loss<double>(const TensorT<double>&,
                                                     const std::vector<TargetGrid>&,
                                                     const LossConfig&);

}  // namespace detnet
