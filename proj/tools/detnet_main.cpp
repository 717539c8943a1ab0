// Command-line front end: dataset generation, anchor clustering, training,
// evaluation, prediction, gradient checking and the experiment presets.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "detnet/anchors.hpp"
#include "detnet/checkpoint.hpp"
#include "detnet/errors.hpp"
#include "detnet/eval.hpp"
#include "detnet/gradcheck.hpp"
#include "detnet/loss.hpp"
#include "detnet/model.hpp"
#include "detnet/pipeline.hpp"
#include "detnet/synthvid.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw detnet::data_error("cannot open " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::parse_error& e) {
        throw detnet::data_error("parse error in " + path + ": " + e.what());
    }
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw detnet::data_error("cannot write " + path);
    out << text;
}

std::vector<detnet::Box> boxes_from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw detnet::data_error("cannot open " + path);
    std::vector<detnet::Box> boxes;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw detnet::data_error(path + ":" + std::to_string(lineno) +
                                     ": " + e.what());
        }
        for (const auto& b : j.value("boxes", json::array())) {
            boxes.push_back({b.at("cx").get<float>(), b.at("cy").get<float>(),
                             b.at("w").get<float>(), b.at("h").get<float>()});
        }
    }
    return boxes;
}

std::vector<detnet::Box> dataset_boxes(const detnet::Dataset& data) {
    std::vector<detnet::Box> boxes;
    for (const auto& seq : data.sequences)
        for (const auto& frame : seq.gt)
            for (const auto& g : frame) boxes.push_back(g.box);
    return boxes;
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir) {
    const json j = read_json_file(spec_path);
    detnet::DatasetSpec spec;
    j.get_to(spec);
    const detnet::Dataset ds = detnet::generate_dataset(spec);
    detnet::export_dataset(ds, out_dir);
    std::cout << "wrote " << ds.sequences.size() << " sequences ("
              << ds.width << "x" << ds.height << ", " << ds.frames
              << " frames) to " << out_dir << "\n";
    return 0;
}

int cmd_anchors(const std::string& ann_path, int k, int stride,
                const std::string& out_path, std::uint64_t seed) {
    const auto boxes = boxes_from_jsonl(ann_path);
    const detnet::AnchorSet set = detnet::kmeans_anchors(boxes, k, seed);
    json j;
    j["k"] = k;
    j["stride"] = stride;
    auto arr = json::array();
    for (const auto& p : set.priors)
        arr.push_back({p.w / float(stride), p.h / float(stride)});
    j["priors"] = arr;
    const std::string text = j.dump(2) + "\n";
    if (out_path.empty())
        std::cout << text;
    else
        write_text_file(out_path, text);
    std::cerr << "clustered " << boxes.size() << " boxes, mean best IoU "
              << set.mean_iou << " after " << set.iterations << " iterations\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    const json j = read_json_file(config_path);
    detnet::ModelConfig mc;
    if (j.contains("model")) j.at("model").get_to(mc);
    detnet::TrainConfig tc;
    if (j.contains("train")) j.at("train").get_to(tc);

    const detnet::Dataset data = detnet::load_dataset(data_dir);
    if (mc.anchors.empty()) {
        const auto boxes = dataset_boxes(data);
        const detnet::AnchorSet set =
            detnet::kmeans_anchors(boxes, mc.num_anchors, tc.seed);
        const float stride = float(mc.stride());
        for (const auto& p : set.priors)
            mc.anchors.push_back({p.w / stride, p.h / stride});
        std::cerr << "anchors from " << boxes.size()
                  << " training boxes (mean best IoU " << set.mean_iou
                  << ")\n";
    }
    mc.validate();

    detnet::DetNet model = detnet::DetNet::build(mc, tc.seed);
    const detnet::TrainResult res = detnet::train(model, data, tc, out_dir);
    std::cout << "steps " << res.steps << ", final loss " << res.final_loss
              << ", checkpoint " << res.checkpoint << "\n";
    if (res.train_map >= 0.0)
        std::cout << "last train-set mAP probe " << res.train_map << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, float iou,
             const std::string& report_path, const std::string& pr_path,
             float score_thresh, float nms_thresh, bool eleven_point) {
    detnet::DetNet model = detnet::load_checkpoint(ckpt);
    const detnet::Dataset data = detnet::load_dataset(data_dir);
    const detnet::EvalReport rep = detnet::evaluate_model(
        model, data, iou, score_thresh, nms_thresh, eleven_point);

    std::cout << "mAP@" << iou << " = " << rep.map << "  (tp " << rep.tp
              << ", fp " << rep.fp << ", fn " << rep.fn << ")\n";
    for (const auto& [tag, m] : rep.per_scenario)
        std::cout << "  " << tag << ": " << m << "\n";

    if (!report_path.empty())
        write_text_file(report_path, rep.to_json().dump(2) + "\n");
    if (!pr_path.empty()) {
        std::string csv = "class,score,recall,precision\n";
        for (std::size_t c = 0; c < rep.pr_curves.size(); ++c) {
            for (const auto& pt : rep.pr_curves[c]) {
                csv += std::to_string(c) + "," + std::to_string(pt.score) +
                       "," + std::to_string(pt.recall) + "," +
                       std::to_string(pt.precision) + "\n";
            }
        }
        write_text_file(pr_path, csv);
    }
    return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& seq_dir,
                const std::string& out_path, float score_thresh,
                float nms_thresh) {
    const fs::path sp(seq_dir);
    const std::string name = sp.filename().string();
    if (name.rfind("seq_", 0) != 0)
        throw detnet::data_error("expected a seq_NNN directory, got " +
                                 seq_dir);
    int seq_id = -1;
    try {
        seq_id = std::stoi(name.substr(4));
    } catch (const std::exception&) {
        throw detnet::data_error("cannot parse sequence id from " + name);
    }

    const detnet::Dataset data =
        detnet::load_dataset(sp.parent_path().string());
    const detnet::SequenceSample* seq = nullptr;
    for (const auto& s : data.sequences)
        if (s.id == seq_id) seq = &s;
    if (!seq)
        throw detnet::data_error("sequence " + std::to_string(seq_id) +
                                 " not present in " +
                                 sp.parent_path().string());

    detnet::DetNet model = detnet::load_checkpoint(ckpt);
    const detnet::ModelConfig& mc = model.config();
    if (data.width != mc.width || data.height != mc.height)
        throw detnet::data_error("sequence frames do not match the model size");

    std::ofstream out(out_path, std::ios::binary);
    if (!out.good()) throw detnet::data_error("cannot write " + out_path);

    detnet::Rng unused(0);
    const int len = seq->frames.dim(0);
    const std::int64_t item =
        std::int64_t(mc.frames) * 3 * mc.height * mc.width;
    const int group = 8;
    for (int f0 = 0; f0 < len; f0 += group) {
        const int b = std::min(group, len - f0);
        detnet::Tensor input({b, mc.frames, 3, mc.height, mc.width});
        for (int i = 0; i < b; ++i) {
            const detnet::TrainingStack st = detnet::sample_training_stack(
                *seq, f0 + i, mc.frames, 1, false, unused);
            std::copy_n(st.frames.data(), item, input.data() + i * item);
        }
        const auto dets = model.predict(input, score_thresh, nms_thresh);
        for (int i = 0; i < b; ++i) {
            json line;
            line["seq"] = seq_id;
            line["frame"] = f0 + i;
            auto arr = json::array();
            for (const auto& d : dets[i]) {
                arr.push_back({{"cx", d.box.x},
                               {"cy", d.box.y},
                               {"w", d.box.w},
                               {"h", d.box.h},
                               {"score", d.score},
                               {"class", d.class_id}});
            }
            line["detections"] = arr;
            out << line.dump() << "\n";
        }
    }
    std::cout << "wrote detections for " << len << " frames to " << out_path
              << "\n";
    return 0;
}

int cmd_gradcheck(const std::string& config_path, double epsilon,
                  std::uint64_t seed) {
    const json j = read_json_file(config_path);
    detnet::ModelConfig mc;
    if (j.contains("model"))
        j.at("model").get_to(mc);
    else
        j.get_to(mc);
    if (mc.anchors.empty()) {
        for (int a = 0; a < mc.num_anchors; ++a)
            mc.anchors.push_back(
                {1.2f + 0.8f * float(a), 1.0f + 0.7f * float(a)});
    }
    mc.validate();

    auto model = detnet::DetNetT<double>::build(mc, seed);
    detnet::Rng rng(seed + 4);
    const detnet::Tensor64 input = detnet::Tensor64::uniform(
        {1, mc.frames, 3, mc.height, mc.width}, rng, 0.0, 1.0);

    std::vector<detnet::GroundTruth> gts;
    for (int i = 0; i < 2; ++i) {
        detnet::Box b;
        b.w = float(rng.uniform(6.0, mc.width * 0.45));
        b.h = float(rng.uniform(6.0, mc.height * 0.45));
        b.x = float(rng.uniform(b.w * 0.5, mc.width - b.w * 0.5));
        b.y = float(rng.uniform(b.h * 0.5, mc.height - b.h * 0.5));
        gts.push_back({b, rng.uniform_int(0, mc.num_classes - 1)});
    }
    const int stride = mc.stride();
    const std::vector<detnet::TargetGrid> targets = {detnet::build_targets(
        gts, mc.width / stride, mc.height / stride, mc.anchors,
        mc.num_classes, float(stride))};

    detnet::LossConfig lc;
    lc.objectness_target = detnet::ObjectnessTarget::kStatic;

    const auto f = [&]() {
        detnet::Tape64 tape;
        const auto ids = model.forward(tape, input, detnet::NormMode::kTrain);
        return detnet::multi_part_loss(tape.value(ids.head), targets, lc)
            .total;
    };

    auto prefs = model.params();
    std::vector<detnet::Tensor64> grads;
    {
        detnet::Tape64 tape;
        const auto ids = model.forward(tape, input, detnet::NormMode::kTrain);
        const auto loss =
            detnet::multi_part_loss(tape.value(ids.head), targets, lc);
        tape.backward(ids.head, loss.grad);
        for (const auto id : ids.param_ids) grads.push_back(tape.grad(id));
    }
    std::vector<detnet::Tensor64*> params;
    std::vector<const detnet::Tensor64*> analytic;
    for (std::size_t i = 0; i < prefs.size(); ++i) {
        params.push_back(prefs[i].tensor);
        analytic.push_back(&grads[i]);
    }

    const detnet::GradCheckReport rep =
        detnet::finite_diff_check(f, params, analytic, epsilon);
    std::cout << "checked " << rep.coords_checked
              << " coordinates, max relative error " << rep.max_rel_error
              << "\n";
    if (!rep.ok()) {
        std::ostringstream os;
        os << "gradient check failed: max relative error " << rep.max_rel_error
           << " at param " << rep.worst_param << " coord " << rep.worst_coord
           << " (analytic " << rep.worst_analytic << ", numeric "
           << rep.worst_numeric << ")";
        throw detnet::numeric_error(os.str());
    }
    std::cout << "gradient check passed\n";
    return 0;
}

int cmd_experiment(const std::string& preset, const std::string& out_dir,
                   std::uint64_t seed) {
    detnet::run_experiment(preset, out_dir, seed);
    std::cout << "experiment tables written to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-stage video vehicle detector on synthetic benchmarks"};
    app.require_subcommand(1);

    std::string spec_path, out_dir = "out";
    auto* gen = app.add_subcommand("generate", "render a synthetic dataset");
    gen->add_option("--spec", spec_path, "dataset spec JSON")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    std::string ann_path, anchors_out;
    int k = 5, stride = 8;
    std::uint64_t anchors_seed = 7;
    auto* anc = app.add_subcommand("anchors", "cluster gt boxes into priors");
    anc->add_option("--ann", ann_path, "annotations JSONL")->required();
    anc->add_option("-k,--clusters", k, "number of priors");
    anc->add_option("--stride", stride, "detection stride (priors are "
                                        "written in cell units)");
    anc->add_option("--out", anchors_out, "output JSON (default: stdout)");
    anc->add_option("--seed", anchors_seed, "clustering seed");

    std::string train_config, train_data, train_out = "ckpt";
    auto* trn = app.add_subcommand("train", "train a detector");
    trn->add_option("--config", train_config, "model+train config JSON")
        ->required();
    trn->add_option("--data", train_data, "dataset directory")->required();
    trn->add_option("--out", train_out, "checkpoint/metrics directory");

    std::string eval_ckpt, eval_data, report_path, pr_path;
    float eval_iou = 0.5f, eval_score = 0.1f, eval_nms = 0.45f;
    bool eleven_point = false;
    auto* evl = app.add_subcommand("eval", "score a checkpoint on a dataset");
    evl->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    evl->add_option("--data", eval_data, "dataset directory")->required();
    evl->add_option("--iou", eval_iou, "matching IoU threshold");
    evl->add_option("--report", report_path, "evaluation report JSON");
    evl->add_option("--pr", pr_path, "precision/recall sweep CSV");
    evl->add_option("--score", eval_score, "detection score threshold");
    evl->add_option("--nms", eval_nms, "NMS IoU threshold");
    evl->add_flag("--eleven-point", eleven_point,
                  "11-point AP interpolation instead of all-point");

    std::string pred_ckpt, pred_seq, pred_out = "detections.jsonl";
    float pred_score = 0.5f, pred_nms = 0.45f;
    auto* prd = app.add_subcommand("predict", "detect over one sequence");
    prd->add_option("--ckpt", pred_ckpt, "checkpoint file")->required();
    prd->add_option("--seq", pred_seq, "sequence directory (seq_NNN)")
        ->required();
    prd->add_option("--out", pred_out, "detections JSONL");
    prd->add_option("--score", pred_score, "detection score threshold");
    prd->add_option("--nms", pred_nms, "NMS IoU threshold");

    std::string gc_config;
    double gc_epsilon = 1e-4;
    std::uint64_t gc_seed = 7;
    auto* gc = app.add_subcommand("gradcheck",
                                  "finite-difference check of the model");
    gc->add_option("--config", gc_config, "model config JSON")->required();
    gc->add_option("--epsilon", gc_epsilon, "finite-difference step");
    gc->add_option("--seed", gc_seed, "model/input seed");

    std::string exp_preset, exp_out = "experiments";
    std::uint64_t exp_seed = 7;
    auto* exp = app.add_subcommand("experiment", "run a preset study");
    exp->add_option("--preset", exp_preset,
                    "focal_sweep | ablation_2d_vs_3d | full")
        ->required();
    exp->add_option("--out", exp_out, "output directory");
    exp->add_option("--seed", exp_seed, "master seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(gen)) return cmd_generate(spec_path, out_dir);
        if (app.got_subcommand(anc))
            return cmd_anchors(ann_path, k, stride, anchors_out, anchors_seed);
        if (app.got_subcommand(trn))
            return cmd_train(train_config, train_data, train_out);
        if (app.got_subcommand(evl))
            return cmd_eval(eval_ckpt, eval_data, eval_iou, report_path,
                            pr_path, eval_score, eval_nms, eleven_point);
        if (app.got_subcommand(prd))
            return cmd_predict(pred_ckpt, pred_seq, pred_out, pred_score,
                               pred_nms);
        if (app.got_subcommand(gc))
            return cmd_gradcheck(gc_config, gc_epsilon, gc_seed);
        if (app.got_subcommand(exp))
            return cmd_experiment(exp_preset, exp_out, exp_seed);
        std::cerr << "no subcommand given\n";
        return 1;
    } catch (const detnet::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const detnet::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const detnet::shape_error& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const detnet::numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
