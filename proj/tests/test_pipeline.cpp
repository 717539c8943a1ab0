#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "detnet/eval.hpp"
#include "detnet/pipeline.hpp"

using namespace detnet;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const char* tag) {
    path = std::filesystem::temp_directory_path() /
           (std::string("detnet_pipe_") + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// A sequence whose frame t is the constant image t, with one gt whose x
// coordinate is also t: reading either back identifies the source frame.
SequenceSample marker_sequence(int len) {
  SequenceSample seq;
  seq.id = 0;
  seq.frames = Tensor({len, 3, 2, 2});
  for (int t = 0; t < len; ++t)
    for (int i = 0; i < 12; ++i) seq.frames.data()[t * 12 + i] = float(t);
  seq.gt.resize(std::size_t(len));
  for (int t = 0; t < len; ++t)
    seq.gt[std::size_t(t)].push_back({Box{float(t), 1.f, 1.f, 1.f}, 0});
  return seq;
}

int frame_marker(const Tensor& stack, int slot) {
  return int(std::lround(stack[std::int64_t(slot) * 12]));
}

// Independent quadratic-time scorer: repeated selection instead of a sort,
// forward-scan precision envelope instead of the backward pass. Float curve
// values and a double accumulator, like the library, so agreement is exact.
struct OracleEval {
  double map = 0.0;
  std::vector<double> ap;
  std::int64_t tp = 0, fp = 0, fn = 0;
};

OracleEval oracle_eval(const std::vector<EvalFrame>& frames, int num_classes,
                       float thr) {
  OracleEval rep;
  std::int64_t total_gts = 0;
  double ap_sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    struct Cand {
      std::size_t f, i;
      float score;
      bool used = false;
    };
    std::vector<Cand> cands;
    std::int64_t gts = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      for (std::size_t i = 0; i < frames[f].dets.size(); ++i)
        if (frames[f].dets[i].class_id == c)
          cands.push_back({f, i, frames[f].dets[i].score});
      for (const auto& g : frames[f].gts)
        if (g.class_id == c) ++gts;
    }
    std::vector<std::vector<char>> taken(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f)
      taken[f].assign(frames[f].gts.size(), 0);

    std::vector<float> rec, prec;
    std::int64_t tp = 0, fp = 0;
    for (std::size_t n = 0; n < cands.size(); ++n) {
      std::size_t pick = cands.size();  // strict > keeps ties in list order
      for (std::size_t j = 0; j < cands.size(); ++j)
        if (!cands[j].used &&
            (pick == cands.size() || cands[j].score > cands[pick].score))
          pick = j;
      cands[pick].used = true;
      const EvalFrame& fr = frames[cands[pick].f];
      int best = -1;
      float best_iou = 0.f;
      for (std::size_t g = 0; g < fr.gts.size(); ++g) {
        if (fr.gts[g].class_id != c || taken[cands[pick].f][g]) continue;
        const float v = iou(fr.dets[cands[pick].i].box, fr.gts[g].box);
        if (v > best_iou) {
          best_iou = v;
          best = int(g);
        }
      }
      if (best >= 0 && best_iou >= thr) {
        taken[cands[pick].f][std::size_t(best)] = 1;
        ++tp;
      } else {
        ++fp;
      }
      rec.push_back(gts > 0 ? float(tp) / float(gts) : 0.f);
      prec.push_back(float(tp) / float(tp + fp));
    }

    double ap;
    if (gts == 0) {
      ap = cands.empty() ? 1.0 : 0.0;
    } else {
      double acc = 0.0;
      float prev = 0.f;
      for (std::size_t i = 0; i < rec.size(); ++i) {
        float env = 0.f;
        for (std::size_t j = i; j < rec.size(); ++j)
          env = std::max(env, prec[j]);
        acc += double(rec[i] - prev) * env;
        prev = rec[i];
      }
      ap = double(float(acc));
    }
    rep.ap.push_back(ap);
    rep.tp += tp;
    rep.fp += fp;
    total_gts += gts;
    ap_sum += ap;
  }
  rep.fn = total_gts - rep.tp;
  rep.map = double(float(ap_sum / num_classes));
  return rep;
}

std::vector<EvalFrame> random_scene(Rng& rng, int num_classes) {
  const int F = rng.uniform_int(1, 3);
  std::vector<EvalFrame> frames(static_cast<std::size_t>(F));
  for (auto& fr : frames) {
    const int G = rng.uniform_int(0, 4);
    for (int g = 0; g < G; ++g) {
      Box b{float(rng.uniform(8.0, 56.0)), float(rng.uniform(8.0, 56.0)),
            float(rng.uniform(4.0, 16.0)), float(rng.uniform(4.0, 16.0))};
      fr.gts.push_back({b, rng.uniform_int(0, num_classes - 1)});
    }
    for (const auto& g : fr.gts) {
      if (rng.uniform() < 0.8) {
        Box b = g.box;
        b.x += float(rng.uniform(-3.0, 3.0));
        b.y += float(rng.uniform(-3.0, 3.0));
        b.w *= float(rng.uniform(0.7, 1.3));
        b.h *= float(rng.uniform(0.7, 1.3));
        const int cls = rng.uniform() < 0.85
                            ? g.class_id
                            : rng.uniform_int(0, num_classes - 1);
        // scores from a coarse grid so ties actually happen
        fr.dets.push_back({b, float(rng.uniform_int(1, 9)) / 10.f, cls});
      }
    }
    const int E = rng.uniform_int(0, 3);
    for (int e = 0; e < E; ++e) {
      Box b{float(rng.uniform(8.0, 56.0)), float(rng.uniform(8.0, 56.0)),
            float(rng.uniform(4.0, 16.0)), float(rng.uniform(4.0, 16.0))};
      fr.dets.push_back({b, float(rng.uniform_int(1, 9)) / 10.f,
                         rng.uniform_int(0, num_classes - 1)});
    }
  }
  return frames;
}

// Small end-to-end fixture: 16x16 scenes, stride-2 single-block model.
Dataset mini_dataset(std::uint64_t seed, int sequences = 3) {
  DatasetSpec spec;
  spec.base.width = spec.base.height = 16;
  spec.base.frames = 4;
  spec.base.min_objects = spec.base.max_objects = 1;
  spec.base.min_size = 6.f;
  spec.base.max_size = 10.f;
  spec.base.min_speed = 0.5f;
  spec.base.max_speed = 1.f;
  spec.sequences = sequences;
  spec.master_seed = seed;
  spec.mix = {{"clean", 1.f}};
  return generate_dataset(spec);
}

ModelConfig mini_model_config() {
  ModelConfig mc;
  mc.frames = 3;
  mc.height = mc.width = 16;
  mc.backbone = {{8, 3, true}};
  mc.temporal_channels = 8;
  mc.head_channels = 8;
  mc.num_anchors = 2;
  mc.num_classes = 1;
  mc.anchors = {{3.f, 3.f}, {5.f, 5.f}};  // cell units at stride 2
  return mc;
}

TrainConfig mini_train_config(std::uint64_t seed) {
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr_boundary_epoch = 1;
  tc.lr_initial = 1e-3;
  tc.lr_late = 1e-4;
  tc.batch_size = 2;
  tc.neighbor_range = 2;
  tc.max_crop_shift = 2;
  tc.seed = seed;
  return tc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Frame stack sampling
// ---------------------------------------------------------------------------

TEST_CASE("fixed stacks take the adjacent frames in temporal order") {
  SequenceSample seq = marker_sequence(41);
  Rng rng(1);
  auto st = sample_training_stack(seq, 20, 3, 10, false, rng);
  CHECK(frame_marker(st.frames, 0) == 19);
  CHECK(frame_marker(st.frames, 1) == 20);
  CHECK(frame_marker(st.frames, 2) == 21);
  REQUIRE(st.gts.size() == 1);
  CHECK(st.gts[0].box.x == 20.f);  // gt comes from the reference frame

  SUBCASE("five-frame stacks step outward") {
    auto st5 = sample_training_stack(seq, 20, 5, 10, false, rng);
    for (int i = 0; i < 5; ++i) CHECK(frame_marker(st5.frames, i) == 18 + i);
  }
  SUBCASE("offsets clamp at the sequence boundaries") {
    auto head = sample_training_stack(seq, 0, 3, 10, false, rng);
    CHECK(frame_marker(head.frames, 0) == 0);
    CHECK(frame_marker(head.frames, 1) == 0);
    CHECK(frame_marker(head.frames, 2) == 1);
    auto tail = sample_training_stack(seq, 40, 3, 10, false, rng);
    CHECK(frame_marker(tail.frames, 2) == 40);
  }
}

TEST_CASE("random stacks keep the reference centered and span the range") {
  SequenceSample seq = marker_sequence(41);
  Rng rng(123);
  const int draws = 10000;
  std::vector<int> before_hist(11, 0), after_hist(11, 0);
  for (int d = 0; d < draws; ++d) {
    auto st = sample_training_stack(seq, 20, 3, 10, true, rng);
    const int b = frame_marker(st.frames, 0);
    const int r = frame_marker(st.frames, 1);
    const int a = frame_marker(st.frames, 2);
    REQUIRE(r == 20);
    REQUIRE(b <= r);
    REQUIRE(a >= r);
    REQUIRE(20 - b >= 1);
    REQUIRE(20 - b <= 10);
    REQUIRE(a - 20 >= 1);
    REQUIRE(a - 20 <= 10);
    ++before_hist[std::size_t(20 - b)];
    ++after_hist[std::size_t(a - 20)];
  }
  // each of the 10 offsets is a p=1/10 Bernoulli count: mean 1000, sigma 30
  for (int off = 1; off <= 10; ++off) {
    CHECK(std::abs(before_hist[std::size_t(off)] - 1000) <= 90);
    CHECK(std::abs(after_hist[std::size_t(off)] - 1000) <= 90);
  }
}

TEST_CASE("stack sampling rejects bad arguments") {
  SequenceSample seq = marker_sequence(5);
  Rng rng(1);
  CHECK_THROWS_AS(sample_training_stack(seq, 0, 2, 10, false, rng),
                  config_error);  // even stack
  CHECK_THROWS_AS(sample_training_stack(seq, 5, 3, 10, false, rng),
                  data_error);  // reference past the end
  CHECK_THROWS_AS(sample_training_stack(seq, 0, 3, 0, false, rng),
                  config_error);
  seq.frames = Tensor({5, 3, 2});
  CHECK_THROWS_AS(sample_training_stack(seq, 0, 3, 10, false, rng),
                  shape_error);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace {

TrainConfig aug_only(bool flip, bool crop, bool hsv) {
  TrainConfig cfg;
  cfg.aug_flip = flip;
  cfg.aug_crop = crop;
  cfg.aug_hsv = hsv;
  return cfg;
}

// One object plus a distinctive probe pixel, off-center so a flip shows.
Tensor probe_frames(int T, int H, int W) {
  Tensor frames({T, 3, H, W});
  frames.fill(0.25f);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < 3; ++c)
      frames.data()[((std::int64_t(t) * 3 + c) * H + 10) * W + 10] = 1.f;
  return frames;
}

}  // namespace

TEST_CASE("augmentation with everything off is the identity") {
  Tensor frames = probe_frames(3, 40, 48);
  Tensor orig = frames;
  std::vector<GroundTruth> gts = {{Box{17.f, 20.f, 8.f, 8.f}, 0}};
  Rng rng(9);
  augment(frames, gts, rng, aug_only(false, false, false));
  CHECK(frames.raw() == orig.raw());
  REQUIRE(gts.size() == 1);
  CHECK(gts[0].box.x == 17.f);
}

TEST_CASE("horizontal flip mirrors pixels and boxes together") {
  const int W = 48, H = 40;
  bool saw_flip = false;
  for (std::uint64_t seed = 0; seed < 12 && !saw_flip; ++seed) {
    Tensor frames = probe_frames(3, H, W);
    Tensor orig = frames;
    std::vector<GroundTruth> gts = {{Box{17.f, 20.f, 8.f, 8.f}, 0}};
    Rng rng(seed);
    augment(frames, gts, rng, aug_only(true, false, false));
    REQUIRE(gts.size() == 1);  // flip-only never drops boxes
    if (frames.raw() == orig.raw()) {
      CHECK(gts[0].box.x == 17.f);
      continue;
    }
    saw_flip = true;
    CHECK(std::abs(gts[0].box.x - float(W - 17)) <= 0.5f);
    CHECK(gts[0].box.y == 20.f);
    // the probe pixel moved to the mirrored column
    CHECK(frames[std::int64_t(10) * W + (W - 1 - 10)] == 1.f);
    // flipping again restores the original exactly
    Rng rng2(seed);
    augment(frames, gts, rng2, aug_only(true, false, false));
    CHECK(frames.raw() == orig.raw());
    CHECK(std::abs(gts[0].box.x - 17.f) <= 0.5f);
  }
  CHECK(saw_flip);
}

TEST_CASE("crop shifts content and boxes by the same offset") {
  const int W = 48, H = 40;
  bool saw_drop = false;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    // recover the shift from an uncappable central probe box
    Tensor fa = probe_frames(1, H, W);
    std::vector<GroundTruth> ga = {{Box{24.f, 24.f, 8.f, 8.f}, 0}};
    Rng ra(seed);
    augment(fa, ga, ra, aug_only(false, true, false));
    REQUIRE(ga.size() == 1);
    const int sx = int(std::lround(ga[0].box.x - 24.f));
    const int sy = int(std::lround(ga[0].box.y - 24.f));
    CHECK(std::abs(sx) <= 6);
    CHECK(std::abs(sy) <= 6);
    CHECK(ga[0].box.w == 8.f);  // interior box is never clipped
    // the probe pixel moved with the boxes
    CHECK(fa[std::int64_t(10 + sy) * W + (10 + sx)] == 1.f);

    // same seed, plus a sliver at the left edge that a big left shift kills
    Tensor fb = probe_frames(1, H, W);
    std::vector<GroundTruth> gb = {{Box{24.f, 24.f, 8.f, 8.f}, 0},
                                   {Box{1.f, 24.f, 4.f, 8.f}, 0}};
    Rng rb(seed);
    augment(fb, gb, rb, aug_only(false, true, false));
    const bool dropped = gb.size() == 1;
    // surviving extent is max(3 + sx, 0); below 2 px it must be dropped
    CHECK(dropped == (3 + sx < 2));
    saw_drop = saw_drop || dropped;
  }
  CHECK(saw_drop);
}

TEST_CASE("color jitter is photometric only and uniform across the stack") {
  Tensor frames({3, 3, 8, 8});
  frames.fill(0.4f);  // gray: saturation zero, value 0.4
  std::vector<GroundTruth> gts = {{Box{4.f, 4.f, 3.f, 3.f}, 0}};
  Rng rng(5);
  augment(frames, gts, rng, aug_only(false, false, true));
  REQUIRE(gts.size() == 1);
  CHECK(gts[0].box.x == 4.f);  // boxes untouched
  // one exposure factor for everything: the image stays constant and gray
  const float v = frames[0];
  CHECK(v > 0.4f / 1.31f);
  CHECK(v < 0.4f * 1.31f);
  for (std::int64_t i = 1; i < frames.size(); ++i) CHECK(frames[i] == v);
}

// ---------------------------------------------------------------------------
// mAP evaluation
// ---------------------------------------------------------------------------

TEST_CASE("perfect detections score a mean average precision of one") {
  std::vector<EvalFrame> frames(2);
  frames[0].gts = {{Box{10.f, 10.f, 4.f, 4.f}, 0}, {Box{30.f, 30.f, 6.f, 6.f}, 1}};
  frames[1].gts = {{Box{20.f, 20.f, 5.f, 5.f}, 1}};
  for (auto& f : frames)
    for (const auto& g : f.gts) f.dets.push_back({g.box, 0.9f, g.class_id});
  auto rep = evaluate_map(frames, 2, 0.5f);
  CHECK(rep.map == 1.f);
  CHECK(rep.tp == 3);
  CHECK(rep.fp == 0);
  CHECK(rep.fn == 0);
}

TEST_CASE("the TP,FP,TP sweep against two truths lands on five sixths") {
  std::vector<EvalFrame> frames(1);
  frames[0].gts = {{Box{10.f, 10.f, 4.f, 4.f}, 0}, {Box{30.f, 30.f, 4.f, 4.f}, 0}};
  frames[0].dets = {{Box{10.f, 10.f, 4.f, 4.f}, 0.9f, 0},
                    {Box{50.f, 50.f, 4.f, 4.f}, 0.8f, 0},
                    {Box{30.f, 30.f, 4.f, 4.f}, 0.7f, 0}};
  auto rep = evaluate_map(frames, 1, 0.5f);
  REQUIRE(rep.pr_curves.size() == 1);
  const auto& pr = rep.pr_curves[0];
  REQUIRE(pr.size() == 3);
  CHECK(pr[0].recall == 0.5f);
  CHECK(pr[0].precision == 1.f);
  CHECK(pr[1].recall == 0.5f);
  CHECK(pr[1].precision == 0.5f);
  CHECK(pr[2].recall == 1.f);
  CHECK(pr[2].precision == 2.f / 3.f);
  // area: 0.5 * 1 + 0.5 * (2/3), reproduced at float precision
  const float expected = float(0.5 + 0.5 * double(2.f / 3.f));
  CHECK(rep.map == expected);
  CHECK(rep.map == doctest::Approx(0.833333).epsilon(1e-6));
  CHECK(rep.tp == 2);
  CHECK(rep.fp == 1);
  CHECK(rep.fn == 0);

  SUBCASE("the eleven-point variant averages interpolated precision") {
    auto rep11 = evaluate_map(frames, 1, 0.5f, true);
    // recalls 0..0.5 see precision 1, the rest 2/3: (6 + 10/3) / 11
    CHECK(rep11.map == doctest::Approx(28.0 / 33.0).epsilon(1e-6));
  }
}

TEST_CASE("empty classes follow the documented conventions") {
  std::vector<EvalFrame> frames(1);
  frames[0].gts = {{Box{10.f, 10.f, 4.f, 4.f}, 0}};
  frames[0].dets = {{Box{10.f, 10.f, 4.f, 4.f}, 0.9f, 0}};
  // class 1 has nothing to find and claims nothing: a perfect score
  auto rep = evaluate_map(frames, 2, 0.5f);
  CHECK(rep.per_class_ap[1] == 1.f);
  CHECK(rep.map == 1.f);
  // a hallucinated class-1 detection turns that into a zero
  frames[0].dets.push_back({Box{20.f, 20.f, 4.f, 4.f}, 0.5f, 1});
  auto rep2 = evaluate_map(frames, 2, 0.5f);
  CHECK(rep2.per_class_ap[1] == 0.f);
  CHECK(rep2.map == 0.5f);
  CHECK_THROWS_AS(evaluate_map(frames, 0, 0.5f), config_error);
}

TEST_CASE("duplicate hits on one truth count as false positives") {
  std::vector<EvalFrame> frames(1);
  frames[0].gts = {{Box{10.f, 10.f, 4.f, 4.f}, 0}};
  frames[0].dets = {{Box{10.f, 10.f, 4.f, 4.f}, 0.9f, 0},
                    {Box{10.f, 10.f, 4.f, 4.f}, 0.8f, 0}};
  auto rep = evaluate_map(frames, 1, 0.5f);
  CHECK(rep.tp == 1);
  CHECK(rep.fp == 1);
}

TEST_CASE("the evaluator matches a quadratic reference matcher") {
  Rng rng(2024);
  const float thresholds[3] = {0.3f, 0.5f, 0.7f};
  for (int trial = 0; trial < 100; ++trial) {
    const int C = rng.uniform_int(1, 3);
    const float thr = thresholds[rng.uniform_int(0, 2)];
    auto frames = random_scene(rng, C);
    auto rep = evaluate_map(frames, C, thr);
    auto ora = oracle_eval(frames, C, thr);
    REQUIRE(rep.per_class_ap.size() == std::size_t(C));
    for (int c = 0; c < C; ++c)
      CHECK(std::abs(double(rep.per_class_ap[std::size_t(c)]) -
                     ora.ap[std::size_t(c)]) <= 1e-9);
    CHECK(std::abs(double(rep.map) - ora.map) <= 1e-9);
    CHECK(rep.tp == ora.tp);
    CHECK(rep.fp == ora.fp);
    CHECK(rep.fn == ora.fn);
  }
}

TEST_CASE("precision recall curves behave like curves") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const int C = rng.uniform_int(1, 2);
    auto frames = random_scene(rng, C);
    float prev_map = -1.f;
    // sweeping the threshold down never lowers the score
    for (const float thr : {0.9f, 0.7f, 0.5f, 0.3f}) {
      auto rep = evaluate_map(frames, C, thr);
      CHECK(rep.map >= 0.f);
      CHECK(rep.map <= 1.f);
      if (prev_map >= 0.f) CHECK(rep.map >= prev_map - 1e-7f);
      prev_map = rep.map;
      for (const auto& curve : rep.pr_curves) {
        float last_recall = 0.f;
        for (const auto& p : curve) {
          CHECK(p.recall >= last_recall);  // non-decreasing sweep
          CHECK(p.recall <= 1.f);
          CHECK(p.precision >= 0.f);
          CHECK(p.precision <= 1.f);
          last_recall = p.recall;
        }
      }
      for (float ap : rep.per_class_ap) {
        CHECK(ap >= 0.f);
        CHECK(ap <= 1.f);
      }
    }
  }
}

TEST_CASE("scenario tags produce a per-scenario breakdown") {
  std::vector<EvalFrame> frames(2);
  frames[0].gts = {{Box{10.f, 10.f, 4.f, 4.f}, 0}};
  frames[0].dets = {{Box{10.f, 10.f, 4.f, 4.f}, 0.9f, 0}};
  frames[0].scenario = "clean";
  frames[1].gts = {{Box{10.f, 10.f, 4.f, 4.f}, 0}};
  frames[1].scenario = "blur";  // miss: no detection
  auto rep = evaluate_map(frames, 1, 0.5f);
  REQUIRE(rep.per_scenario.count("clean") == 1);
  REQUIRE(rep.per_scenario.count("blur") == 1);
  CHECK(rep.per_scenario["clean"] == 1.f);
  CHECK(rep.per_scenario["blur"] == 0.f);
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

TEST_CASE("the learning rate schedule switches at the boundary epoch") {
  TrainConfig tc;
  CHECK(tc.lr_for_epoch(0) == 1e-3);
  CHECK(tc.lr_for_epoch(59) == 1e-3);
  CHECK(tc.lr_for_epoch(60) == 1e-4);
  CHECK(tc.lr_for_epoch(79) == 1e-4);
  tc.lr_literal = true;  // the schedule read at face value
  CHECK(tc.lr_for_epoch(0) == 1e-2);
  CHECK(tc.lr_for_epoch(60) == 1e-3);
}

TEST_CASE("train config validation and serialization") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  auto reject = [](auto&& tweak) {
    TrainConfig bad;
    tweak(bad);
    CHECK_THROWS_AS(bad.validate(), config_error);
  };
  reject([](TrainConfig& c) { c.epochs = 0; });
  reject([](TrainConfig& c) { c.lr_initial = -1.0; });
  reject([](TrainConfig& c) { c.lr_boundary_epoch = c.epochs + 1; });
  reject([](TrainConfig& c) { c.batch_size = 0; });
  reject([](TrainConfig& c) { c.momentum = 1.0; });
  reject([](TrainConfig& c) { c.weight_decay = -1e-4; });
  reject([](TrainConfig& c) { c.max_crop_shift = -1; });
  reject([](TrainConfig& c) { c.neighbor_range = 0; });
  reject([](TrainConfig& c) { c.refs_per_sequence = 0; });
  reject([](TrainConfig& c) { c.max_steps = -1; });
  reject([](TrainConfig& c) { c.eval_iou = 1.f; });
  reject([](TrainConfig& c) { c.loss.focal.gamma = -1.f; });

  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.lr_boundary_epoch = 9;
  cfg.lr_literal = true;
  cfg.batch_size = 4;
  cfg.aug_hsv = false;
  cfg.fixed_stacks = true;
  cfg.seed = 99;
  cfg.stop_at_train_map = 0.95;
  cfg.loss.focal.gamma = 3.f;
  nlohmann::json j = cfg;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  // defaults fill missing fields
  TrainConfig sparse = nlohmann::json{{"epochs", 5}}.get<TrainConfig>();
  CHECK(sparse.epochs == 5);
  CHECK(sparse.batch_size == TrainConfig{}.batch_size);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TEST_CASE("a zero learning rate leaves the parameters untouched") {
  Dataset data = mini_dataset(31);
  DetNet model = DetNet::build(mini_model_config(), 7);
  std::vector<Tensor> before;
  for (const auto& p : model.params()) before.push_back(*p.tensor);
  TrainConfig tc = mini_train_config(1);
  tc.epochs = 1;
  tc.lr_boundary_epoch = 0;
  tc.lr_initial = tc.lr_late = 0.0;
  TempDir tmp("lr0");
  auto res = train(model, data, tc, tmp.str());
  CHECK(res.steps == 2);  // 3 sequences / batch 2
  auto now = model.params();
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(now[i].tensor->raw() == before[i].raw());
}

TEST_CASE("training logs, checkpoints and reruns bit-identically") {
  Dataset data = mini_dataset(32);
  TrainConfig tc = mini_train_config(5);
  TempDir ta("runa"), tb("runb");

  DetNet m1 = DetNet::build(mini_model_config(), 7);
  auto r1 = train(m1, data, tc, ta.str());
  DetNet m2 = DetNet::build(mini_model_config(), 7);
  auto r2 = train(m2, data, tc, tb.str());

  CHECK(r1.steps == r2.steps);
  CHECK(r1.steps == 4);  // 2 epochs x ceil(3/2)
  const std::string csv1 = slurp(r1.metrics_csv);
  CHECK(csv1 == slurp(r2.metrics_csv));
  CHECK(slurp(r1.checkpoint) == slurp(r2.checkpoint));
  CHECK(csv1.rfind("step,epoch,lr,loss_total,loss_reg,loss_obj,loss_cls\n",
                   0) == 0);
  // one row per step plus the header
  CHECK(std::count(csv1.begin(), csv1.end(), '\n') == r1.steps + 1);
  // checkpoint at the schedule boundary plus the final one
  CHECK(std::filesystem::exists(ta.path / "model_epoch_1.bin"));
  CHECK(std::filesystem::exists(ta.path / "model.bin"));
  // logged lr follows the schedule
  CHECK(csv1.find("1,0,0.001,") != std::string::npos);
  CHECK(csv1.find("3,1,0.0001,") != std::string::npos);
}

TEST_CASE("losses trend downward over two hundred steps") {
  // median verdict over three training seeds on the small fixture
  Dataset data = mini_dataset(33, 4);
  int improved = 0;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    DetNet model = DetNet::build(mini_model_config(), 40 + seed);
    TrainConfig tc = mini_train_config(seed);
    tc.epochs = 200;
    tc.lr_boundary_epoch = 200;
    tc.max_steps = 200;
    tc.refs_per_sequence = 1;
    TempDir tmp("descent");
    auto res = train(model, data, tc, tmp.str());
    REQUIRE(res.steps == 200);
    // pull loss_total of steps 1 and 200 back out of the log
    std::ifstream in(res.metrics_csv);
    std::string line;
    std::getline(in, line);  // header
    double first = 0.0, last = 0.0;
    for (int s = 1; s <= 200; ++s) {
      REQUIRE(std::getline(in, line));
      std::istringstream ls(line);
      std::string cell;
      for (int col = 0; col < 4; ++col) std::getline(ls, cell, ',');
      if (s == 1) first = std::stod(cell);
      if (s == 200) last = std::stod(cell);
    }
    if (last < first) ++improved;
  }
  CHECK(improved >= 2);
}

TEST_CASE("training probes can stop the run early") {
  Dataset data = mini_dataset(34);
  DetNet model = DetNet::build(mini_model_config(), 7);
  TrainConfig tc = mini_train_config(2);
  tc.epochs = 50;
  tc.eval_every = 3;
  tc.stop_at_train_map = 0.0;  // any probe satisfies this
  TempDir tmp("probe");
  auto res = train(model, data, tc, tmp.str());
  CHECK(res.steps == 3);
  CHECK(res.train_map >= 0.0);
  CHECK(res.train_map <= 1.0);
}

TEST_CASE("a diverging run aborts with diagnostics") {
  Dataset data = mini_dataset(35);
  DetNet model = DetNet::build(mini_model_config(), 7);
  TrainConfig tc = mini_train_config(3);
  tc.epochs = 50;
  tc.max_steps = 10;
  tc.lr_initial = tc.lr_late = 1e12;  // blows up within a step or two
  TempDir tmp("blowup");
  try {
    train(model, data, tc, tmp.str());
    FAIL("expected a numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("train rejects mismatched datasets and unset anchors") {
  Dataset data = mini_dataset(36);
  TrainConfig tc = mini_train_config(1);
  TempDir tmp("reject");
  {
    DetNet model = DetNet::build(mini_model_config(), 7);
    Dataset wrong = data;
    wrong.width = 32;
    CHECK_THROWS_AS(train(model, wrong, tc, tmp.str()), data_error);
    Dataset empty = data;
    empty.sequences.clear();
    CHECK_THROWS_AS(train(model, empty, tc, tmp.str()), data_error);
  }
  {
    ModelConfig mc = mini_model_config();
    mc.anchors.clear();
    DetNet model = DetNet::build(mc, 7);
    CHECK_THROWS_AS(train(model, data, tc, tmp.str()), config_error);
  }
}

// ---------------------------------------------------------------------------
// Model evaluation and experiments
// ---------------------------------------------------------------------------

TEST_CASE("model evaluation is deterministic and tagged by scenario") {
  Dataset data = mini_dataset(37);
  DetNet model = DetNet::build(mini_model_config(), 11);
  auto r1 = evaluate_model(model, data, 0.5f, 0.3f, 0.45f);
  auto r2 = evaluate_model(model, data, 0.5f, 0.3f, 0.45f);
  CHECK(r1.map == r2.map);
  CHECK(r1.map >= 0.f);
  CHECK(r1.map <= 1.f);
  CHECK(r1.iou_threshold == 0.5f);
  REQUIRE(r1.per_scenario.count("clean") == 1);
  CHECK(r1.per_scenario["clean"] == r1.map);

  Dataset wrong = data;
  wrong.height = 8;
  CHECK_THROWS_AS(evaluate_model(model, wrong, 0.5f, 0.3f, 0.45f), data_error);
}

TEST_CASE("unknown experiment presets are rejected up front") {
  TempDir tmp("preset");
  CHECK_THROWS_AS(run_experiment("focal_swoop", tmp.str()), config_error);
}
