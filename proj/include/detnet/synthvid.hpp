#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "detnet/geometry.hpp"
#include "detnet/rng.hpp"
#include "detnet/tensor.hpp"

namespace detnet {

// Parameters for one synthetic sequence: rectangles gliding over a noisy
// background, with optional motion blur (shutter smear along velocity),
// per-frame defocus (disk blur of wandering radius) and brightness scaling.
struct SceneSpec {
    int width = 96;
    int height = 96;
    int frames = 24;
    int min_objects = 1;
    int max_objects = 3;
    float min_speed = 0.5f;  // px/frame
    float max_speed = 3.f;
    float min_size = 10.f;  // box extents, px
    float max_size = 28.f;
    float jitter = 0.f;       // per-frame velocity perturbation (std dev, px)
    float shutter = 0.f;      // fraction of the frame interval the shutter is
                              // open; smear length = shutter * speed
    float min_defocus = 0.f;  // disk blur radius range, px; radius is redrawn
    float max_defocus = 0.f;  // every frame (hunting autofocus)
    float noise = 0.02f;      // per-pixel gaussian sigma, after brightness
    float brightness = 1.f;
    float background = 0.4f;
    int num_classes = 1;  // 1, or 2 for light/dark rectangles
    std::string scenario = "clean";
    std::uint64_t seed = 0;

    void validate() const;
};

// Overwrites the degradation fields to one of the benchmark scenarios:
// clean, blur, defocus, dark.
void apply_scenario(SceneSpec& spec, const std::string& tag);

void to_json(nlohmann::json& j, const SceneSpec& spec);
void from_json(const nlohmann::json& j, SceneSpec& spec);

struct ObjectState {
    Box box;        // current center/extents, px
    float vx = 0.f;
    float vy = 0.f;
    int class_id = 0;
    float shade = 0.8f;  // rectangle intensity before brightness scaling
};

struct SequenceSample {
    int id = 0;
    Tensor frames;  // [T, 3, H, W], values in [0,1]
    std::vector<std::vector<GroundTruth>> gt;  // per frame, unblurred extents
    std::string scenario;
    std::uint64_t seed = 0;
};

// Integrates the given objects over spec.frames frames (reflecting at the
// frame margins) and renders each frame. rng feeds jitter, defocus hunting
// and pixel noise.
SequenceSample render_sequence(const SceneSpec& spec,
                               std::vector<ObjectState> objects, Rng& rng);

// Samples object count, sizes, shades and velocities from the spec ranges
// (seeded by spec.seed), then renders.
SequenceSample generate_sequence(const SceneSpec& spec);

// A whole benchmark: `sequences` sequences whose scenario tags follow `mix`
// (largest-remainder apportionment), each seeded by derive(master_seed, id).
struct DatasetSpec {
    SceneSpec base;
    int sequences = 8;
    std::vector<std::pair<std::string, float>> mix = {{"clean", 1.f}};
    std::uint64_t master_seed = 1;

    void validate() const;
    std::vector<std::string> scenario_of_each() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

struct Dataset {
    std::vector<SequenceSample> sequences;
    int width = 0, height = 0, frames = 0, num_classes = 1;
    std::uint64_t master_seed = 0;
};

Dataset generate_dataset(const DatasetSpec& spec);

// Layout under dir: manifest.json, annotations.jsonl (one line per frame),
// seq_NNN/frame_NNN.ppm (binary P6).
void export_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace detnet
