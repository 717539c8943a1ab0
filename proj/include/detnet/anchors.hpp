#pragma once

#include <cstdint>
#include <vector>

#include "detnet/geometry.hpp"

namespace detnet {

struct AnchorSet {
    std::vector<AnchorPrior> priors;  // sorted by area, ascending
    float mean_iou = 0.f;             // mean best shape-IoU of inputs vs priors
    int iterations = 0;
};

// Clusters box shapes with k-means under the distance 1 - shape_iou.
// Seeding is farthest-point: the first centroid is drawn uniformly from the
// boxes, each subsequent one is the box maximising its distance to the nearest
// chosen centroid. A centroid only moves to its members' mean when that
// lowers the summed member distance, so the objective (mean distance of each
// box to its assigned centroid) never increases between iterations. Empty
// clusters are reseeded from the box farthest from its current centroid.
AnchorSet kmeans_anchors(const std::vector<Box>& boxes, int k, uint64_t seed,
                         int max_iters = 300);

// Mean over boxes of the best shape-IoU against any prior.
float mean_best_shape_iou(const std::vector<Box>& boxes,
                          const std::vector<AnchorPrior>& priors);

struct Assignment {
    int gt_index = 0;
    int cell_x = 0;
    int cell_y = 0;
    int anchor = 0;
};

struct AssignmentResult {
    std::vector<Assignment> assignments;
    std::vector<int> dropped;  // gt indices with no free slot / center off-grid
};

// Picks the responsible head slot for each ground-truth box: the cell holding
// its center and the anchor with the highest shape-IoU (ties: lowest anchor
// index). Boxes are processed largest-area first (ties: lowest index), so
// when two boxes want the same slot the larger one keeps it and the smaller
// falls through to its next-best anchor in that cell; a box is dropped when
// every anchor in its cell is taken or its center lies outside the grid.
AssignmentResult assign_responsible(const std::vector<GroundTruth>& gts,
                                    const std::vector<AnchorPrior>& anchors,
                                    int grid_w, int grid_h, float stride);

}  // namespace detnet
