#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "detnet/eval.hpp"
#include "detnet/loss.hpp"
#include "detnet/model.hpp"
#include "detnet/rng.hpp"
#include "detnet/synthvid.hpp"

namespace detnet {

struct TrainConfig {
    int epochs = 80;
    // The printed schedule reads "10e-3"/"10e-4"; interpreted as 1e-3/1e-4.
    // lr_literal selects the literal reading (1e-2/1e-3) instead.
    double lr_initial = 1e-3;
    double lr_late = 1e-4;
    int lr_boundary_epoch = 60;  // epochs [0, boundary) use lr_initial
    bool lr_literal = false;
    int batch_size = 8;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    bool aug_flip = true;
    bool aug_crop = true;
    bool aug_hsv = true;
    int max_crop_shift = 6;     // px, per axis
    int neighbor_range = 10;    // train-time frame offsets drawn from [-R, R]
    bool fixed_stacks = false;  // center reference, offsets +-1, no shuffling
    int refs_per_sequence = 1;  // samples drawn per sequence per epoch
    std::uint64_t seed = 1;
    int max_steps = 0;          // 0: run the full epoch count
    int eval_every = 0;         // steps between train-set mAP probes; 0: off
    double stop_at_train_map = -1.0;  // early stop once a probe reaches this
    float eval_iou = 0.5f;
    float score_thresh = 0.5f;
    float nms_thresh = 0.45f;
    LossConfig loss;

    void validate() const;
    double lr_for_epoch(int epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct TrainingStack {
    Tensor frames;                 // [T, 3, H, W]
    std::vector<GroundTruth> gts;  // boxes of the reference frame
};

// Picks num_frames indices around `reference` keeping temporal order, the
// reference in the middle. Randomized offsets are drawn uniformly per side
// from [-neighbor_range, -1] and [1, neighbor_range]; fixed mode uses +-1
// steps. All indices are clamped into the sequence.
TrainingStack sample_training_stack(const SequenceSample& seq, int reference,
                                    int num_frames, int neighbor_range,
                                    bool randomize, Rng& rng);

// One flip/shift/color decision applied to every frame of the stack and to
// the boxes. Boxes pushed out of frame (either extent clipped below 2 px)
// are dropped.
void augment(Tensor& frames, std::vector<GroundTruth>& gts, Rng& rng,
             const TrainConfig& cfg);

struct TrainResult {
    int steps = 0;
    double final_loss = 0.0;
    double train_map = -1.0;  // last probe result, if probing was on
    std::string metrics_csv;
    std::string checkpoint;
};

// SGD training over the dataset; writes metrics.csv and checkpoints into
// out_dir. Deterministic for a fixed config and seed.
TrainResult train(DetNet& model, const Dataset& data, const TrainConfig& cfg,
                  const std::string& out_dir);

// Scores the model over every sequence at fixed reference frames (near the
// start, middle and end) with +-1 neighbor offsets.
EvalReport evaluate_model(DetNet& model, const Dataset& data,
                          float iou_threshold, float score_thresh,
                          float nms_thresh, bool eleven_point = false);

// Experiment presets; writes one CSV per table into out_dir.
//   focal_sweep       gamma in {0,1,2,3,4} x 3 seeds, mean mAP per gamma
//   ablation_2d_vs_3d temporal fusion vs equal-parameter single-frame stack,
//                     3 seeds, per-scenario mAP columns
//   full              both of the above
void run_experiment(const std::string& preset, const std::string& out_dir,
                    std::uint64_t master_seed = 7);

}  // namespace detnet
