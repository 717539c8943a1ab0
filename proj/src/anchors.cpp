#include "detnet/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "detnet/errors.hpp"
#include "detnet/rng.hpp"

namespace detnet {

namespace {

// Distances are evaluated in double so the monotone-objective guarantee is
// not at the mercy of float rounding.
double shape_iou_d(double aw, double ah, double bw, double bh) {
    double inter = std::min(aw, bw) * std::min(ah, bh);
    double uni = aw * ah + bw * bh - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

double shape_dist(double aw, double ah, double bw, double bh) {
    return 1.0 - shape_iou_d(aw, ah, bw, bh);
}

struct Pt {
    double w, h;
};

int nearest_centroid(const Pt& p, const std::vector<Pt>& centroids) {
    int best = 0;
    double best_d = shape_dist(p.w, p.h, centroids[0].w, centroids[0].h);
    for (size_t c = 1; c < centroids.size(); ++c) {
        double d = shape_dist(p.w, p.h, centroids[c].w, centroids[c].h);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

double cluster_cost(const std::vector<Pt>& pts, const std::vector<int>& assign,
                    int cluster, const Pt& centroid) {
    double cost = 0.0;
    for (size_t i = 0; i < pts.size(); ++i) {
        if (assign[i] != cluster) continue;
        cost += shape_dist(pts[i].w, pts[i].h, centroid.w, centroid.h);
    }
    return cost;
}

}  // namespace

AnchorSet kmeans_anchors(const std::vector<Box>& boxes, int k, uint64_t seed,
                         int max_iters) {
    DETNET_CHECK_T(k >= 1, config_error, "anchor count must be >= 1");
    DETNET_CHECK_T(static_cast<int>(boxes.size()) >= k, config_error,
                   "need at least " << k << " boxes to fit " << k
                                    << " anchors, got " << boxes.size());
    std::vector<Pt> pts;
    pts.reserve(boxes.size());
    for (const Box& b : boxes) {
        DETNET_CHECK_T(b.w > 0.f && b.h > 0.f, data_error,
                       "anchor clustering needs positive box extents");
        pts.push_back(Pt{static_cast<double>(b.w), static_cast<double>(b.h)});
    }
    const size_t n = pts.size();

    // Farthest-point seeding.
    Rng rng(seed);
    std::vector<Pt> centroids;
    centroids.push_back(pts[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(n) - 1))]);
    while (static_cast<int>(centroids.size()) < k) {
        size_t far_idx = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < n; ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (const Pt& c : centroids)
                d = std::min(d, shape_dist(pts[i].w, pts[i].h, c.w, c.h));
            if (d > far_d) {
                far_d = d;
                far_idx = i;
            }
        }
        centroids.push_back(pts[far_idx]);
    }

    std::vector<int> assign(n, 0);
    for (size_t i = 0; i < n; ++i) assign[i] = nearest_centroid(pts[i], centroids);

    auto objective = [&]() {
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const Pt& c = centroids[static_cast<size_t>(assign[i])];
            acc += shape_dist(pts[i].w, pts[i].h, c.w, c.h);
        }
        return acc / static_cast<double>(n);
    };

    double prev_objective = objective();
    int iter = 0;
    for (; iter < max_iters; ++iter) {
        bool changed = false;

        // Reseed any empty cluster from the point farthest from its centroid.
        std::vector<int> count(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < n; ++i) ++count[static_cast<size_t>(assign[i])];
        for (int c = 0; c < k; ++c) {
            if (count[static_cast<size_t>(c)] > 0) continue;
            size_t far_idx = 0;
            double far_d = -1.0;
            for (size_t i = 0; i < n; ++i) {
                const Pt& ct = centroids[static_cast<size_t>(assign[i])];
                double d = shape_dist(pts[i].w, pts[i].h, ct.w, ct.h);
                if (d > far_d && count[static_cast<size_t>(assign[i])] > 1) {
                    far_d = d;
                    far_idx = i;
                }
            }
            centroids[static_cast<size_t>(c)] = pts[far_idx];
            --count[static_cast<size_t>(assign[far_idx])];
            assign[far_idx] = c;
            ++count[static_cast<size_t>(c)];
            changed = true;
        }

        // Guarded centroid update: only move to the member mean when that
        // lowers the member cost, otherwise the objective could rise (the
        // mean is not the 1 - shape-IoU minimiser in general).
        for (int c = 0; c < k; ++c) {
            double sw = 0.0, sh = 0.0;
            int m = 0;
            for (size_t i = 0; i < n; ++i) {
                if (assign[i] != c) continue;
                sw += pts[i].w;
                sh += pts[i].h;
                ++m;
            }
            if (m == 0) continue;
            Pt mean{sw / m, sh / m};
            double old_cost = cluster_cost(pts, assign, c, centroids[static_cast<size_t>(c)]);
            double new_cost = cluster_cost(pts, assign, c, mean);
            if (new_cost < old_cost) {
                centroids[static_cast<size_t>(c)] = mean;
                changed = true;
            }
        }

        // Reassign; moving a point to a strictly nearer centroid can only
        // lower the objective.
        for (size_t i = 0; i < n; ++i) {
            int best = nearest_centroid(pts[i], centroids);
            double cur = shape_dist(pts[i].w, pts[i].h,
                                    centroids[static_cast<size_t>(assign[i])].w,
                                    centroids[static_cast<size_t>(assign[i])].h);
            double cand = shape_dist(pts[i].w, pts[i].h,
                                     centroids[static_cast<size_t>(best)].w,
                                     centroids[static_cast<size_t>(best)].h);
            if (cand < cur) {
                assign[i] = best;
                changed = true;
            }
        }

        // Every step above is gated on an exact cost comparison, so the
        // objective cannot rise; a violation means a broken update rule.
        const double cur_objective = objective();
        DETNET_CHECK_T(cur_objective <= prev_objective + 1e-12, numeric_error,
                       "kmeans objective rose from " << prev_objective << " to "
                                                     << cur_objective);
        prev_objective = cur_objective;

        if (!changed) break;
    }

    AnchorSet set;
    set.iterations = iter;
    for (const Pt& c : centroids)
        set.priors.push_back(AnchorPrior{static_cast<float>(c.w),
                                         static_cast<float>(c.h)});
    std::sort(set.priors.begin(), set.priors.end(),
              [](const AnchorPrior& a, const AnchorPrior& b) {
                  double aa = static_cast<double>(a.w) * a.h;
                  double ba = static_cast<double>(b.w) * b.h;
                  if (aa != ba) return aa < ba;
                  if (a.w != b.w) return a.w < b.w;
                  return a.h < b.h;
              });
    set.mean_iou = mean_best_shape_iou(boxes, set.priors);
    return set;
}

float mean_best_shape_iou(const std::vector<Box>& boxes,
                          const std::vector<AnchorPrior>& priors) {
    DETNET_CHECK_T(!priors.empty(), config_error, "no anchor priors given");
    if (boxes.empty()) return 0.f;
    double acc = 0.0;
    for (const Box& b : boxes) {
        double best = 0.0;
        for (const AnchorPrior& p : priors)
            best = std::max(best, shape_iou_d(b.w, b.h, p.w, p.h));
        acc += best;
    }
    return static_cast<float>(acc / static_cast<double>(boxes.size()));
}

AssignmentResult assign_responsible(const std::vector<GroundTruth>& gts,
                                    const std::vector<AnchorPrior>& anchors,
                                    int grid_w, int grid_h, float stride) {
    DETNET_CHECK_T(!anchors.empty(), config_error, "no anchors to assign");
    DETNET_CHECK_T(grid_w >= 1 && grid_h >= 1, config_error,
                   "grid extents must be positive");
    const int k = static_cast<int>(anchors.size());

    std::vector<int> order(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return box_area(gts[static_cast<size_t>(a)].box) >
               box_area(gts[static_cast<size_t>(b)].box);
    });

    // taken[cell][anchor]
    std::vector<uint8_t> taken(static_cast<size_t>(grid_w) * grid_h * k, 0);
    AssignmentResult result;
    for (int gi : order) {
        const GroundTruth& gt = gts[static_cast<size_t>(gi)];
        int cx = cell_index(gt.box.x, stride);
        int cy = cell_index(gt.box.y, stride);
        if (cx < 0 || cx >= grid_w || cy < 0 || cy >= grid_h) {
            result.dropped.push_back(gi);
            continue;
        }
        // Anchor preference: best shape-IoU first, ties to the lower index.
        std::vector<int> pref(static_cast<size_t>(k));
        for (int a = 0; a < k; ++a) pref[static_cast<size_t>(a)] = a;
        // Anchors live in cell units; scale to pixels for the comparison.
        std::vector<double> fit(static_cast<size_t>(k));
        for (int a = 0; a < k; ++a)
            fit[static_cast<size_t>(a)] = shape_iou_d(
                gt.box.w, gt.box.h,
                static_cast<double>(anchors[static_cast<size_t>(a)].w) * stride,
                static_cast<double>(anchors[static_cast<size_t>(a)].h) * stride);
        std::stable_sort(pref.begin(), pref.end(), [&](int a, int b) {
            return fit[static_cast<size_t>(a)] > fit[static_cast<size_t>(b)];
        });
        size_t cell_base = (static_cast<size_t>(cy) * grid_w + cx) * k;
        bool placed = false;
        for (int a : pref) {
            if (taken[cell_base + static_cast<size_t>(a)]) continue;
            taken[cell_base + static_cast<size_t>(a)] = 1;
            result.assignments.push_back(Assignment{gi, cx, cy, a});
            placed = true;
            break;
        }
        if (!placed) result.dropped.push_back(gi);
    }
    return result;
}

}  // namespace detnet
