#include "detnet/model.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include "detnet/errors.hpp"
#include "detnet/rng.hpp"

namespace detnet {

int ModelConfig::stride() const {
    int s = 1;
    for (const BackboneBlock& b : backbone)
        if (b.pool) s *= 2;
    return s;
}

int ModelConfig::backbone_out_channels() const {
    DETNET_CHECK_T(!backbone.empty(), config_error, "backbone has no blocks");
    return backbone.back().channels;
}

int ModelConfig::fused_channels() const {
    return temporal_channels > 0 ? temporal_channels : backbone_out_channels();
}

void ModelConfig::validate() const {
    DETNET_CHECK_T(frames >= 1, config_error, "frames must be >= 1");
    DETNET_CHECK_T(height >= 1 && width >= 1, config_error,
                   "frame extents must be positive");
    DETNET_CHECK_T(in_channels >= 1, config_error, "in_channels must be >= 1");
    DETNET_CHECK_T(!backbone.empty(), config_error, "backbone has no blocks");
    DETNET_CHECK_T(!temporal.empty(), config_error, "temporal stage has no layers");
    DETNET_CHECK_T(head_channels >= 1, config_error, "head_channels must be >= 1");
    DETNET_CHECK_T(num_anchors >= 1, config_error, "num_anchors must be >= 1");
    DETNET_CHECK_T(num_classes >= 1, config_error, "num_classes must be >= 1");
    DETNET_CHECK_T(norm_momentum > 0.f && norm_momentum < 1.f, config_error,
                   "norm_momentum must lie in (0,1)");
    DETNET_CHECK_T(anchors.empty() ||
                       static_cast<int>(anchors.size()) == num_anchors,
                   config_error, "got " << anchors.size() << " anchor priors for K="
                                        << num_anchors);
    for (const AnchorPrior& a : anchors)
        DETNET_CHECK_T(a.w > 0.f && a.h > 0.f, config_error,
                       "anchor priors must have positive extents");

    int h = height, w = width;
    for (size_t i = 0; i < backbone.size(); ++i) {
        const BackboneBlock& b = backbone[i];
        DETNET_CHECK_T(b.channels >= 1, config_error,
                       "backbone block " << i << " has no channels");
        DETNET_CHECK_T(b.kernel == 1 || b.kernel == 3, config_error,
                       "backbone block " << i << " kernel must be 1 or 3");
        if (b.pool) {
            DETNET_CHECK_T(h % 2 == 0 && w % 2 == 0, config_error,
                           "pool after backbone block " << i << " sees odd extent "
                               << h << "x" << w);
            h /= 2;
            w /= 2;
        }
    }

    int t = frames;
    for (size_t i = 0; i < temporal.size(); ++i) {
        const TemporalLayer& l = temporal[i];
        DETNET_CHECK_T(l.kt >= 1 && l.pt >= 0, config_error,
                       "temporal layer " << i << " has invalid kernel/padding");
        DETNET_CHECK_T(l.khw == 1 || l.khw == 3, config_error,
                       "temporal layer " << i << " spatial kernel must be 1 or 3");
        t = t + 2 * l.pt - l.kt + 1;
        DETNET_CHECK_T(t >= 1, config_error,
                       "temporal schedule exhausts the time axis at layer " << i);
    }
    DETNET_CHECK_T(t == 1, config_error,
                   "temporal schedule ends with T=" << t
                       << "; it must collapse the time axis to 1");
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json::object();
    j["frames"] = cfg.frames;
    j["height"] = cfg.height;
    j["width"] = cfg.width;
    j["in_channels"] = cfg.in_channels;
    j["backbone"] = nlohmann::json::array();
    for (const BackboneBlock& b : cfg.backbone)
        j["backbone"].push_back(
            {{"channels", b.channels}, {"kernel", b.kernel}, {"pool", b.pool}});
    j["temporal"] = nlohmann::json::array();
    for (const TemporalLayer& l : cfg.temporal)
        j["temporal"].push_back({{"kt", l.kt}, {"khw", l.khw}, {"pt", l.pt}});
    j["temporal_channels"] = cfg.temporal_channels;
    j["head_channels"] = cfg.head_channels;
    j["num_anchors"] = cfg.num_anchors;
    j["num_classes"] = cfg.num_classes;
    j["norm"] = cfg.norm;
    j["norm_momentum"] = cfg.norm_momentum;
    j["leaky_slope"] = cfg.leaky_slope;
    j["baseline_2d"] = cfg.baseline_2d;
    j["anchors"] = nlohmann::json::array();
    for (const AnchorPrior& a : cfg.anchors)
        j["anchors"].push_back({a.w, a.h});
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    ModelConfig def;
    cfg.frames = j.value("frames", def.frames);
    cfg.height = j.value("height", def.height);
    cfg.width = j.value("width", def.width);
    cfg.in_channels = j.value("in_channels", def.in_channels);
    if (j.contains("backbone")) {
        cfg.backbone.clear();
        for (const auto& e : j.at("backbone"))
            cfg.backbone.push_back(BackboneBlock{e.at("channels").get<int>(),
                                                 e.value("kernel", 3),
                                                 e.value("pool", false)});
    } else {
        cfg.backbone = def.backbone;
    }
    if (j.contains("temporal")) {
        cfg.temporal.clear();
        for (const auto& e : j.at("temporal"))
            cfg.temporal.push_back(TemporalLayer{e.at("kt").get<int>(),
                                                 e.value("khw", 3),
                                                 e.value("pt", 0)});
    } else {
        cfg.temporal = def.temporal;
    }
    cfg.temporal_channels = j.value("temporal_channels", def.temporal_channels);
    cfg.head_channels = j.value("head_channels", def.head_channels);
    cfg.num_anchors = j.value("num_anchors", def.num_anchors);
    cfg.num_classes = j.value("num_classes", def.num_classes);
    cfg.norm = j.value("norm", def.norm);
    cfg.norm_momentum = j.value("norm_momentum", def.norm_momentum);
    cfg.leaky_slope = j.value("leaky_slope", def.leaky_slope);
    cfg.baseline_2d = j.value("baseline_2d", def.baseline_2d);
    cfg.anchors.clear();
    if (j.contains("anchors")) {
        for (const auto& e : j.at("anchors"))
            cfg.anchors.push_back(
                AnchorPrior{e.at(0).get<float>(), e.at(1).get<float>()});
    }
}

std::vector<BackboneBlock> darknet_conv23_blocks() {
    return {
        {32, 3, true},
        {64, 3, true},
        {128, 3, false}, {64, 1, false}, {128, 3, true},
        {256, 3, false}, {128, 1, false}, {256, 3, true},
        {512, 3, false}, {256, 1, false}, {512, 3, false}, {256, 1, false},
        {512, 3, true},
        {1024, 3, false}, {512, 1, false}, {1024, 3, false}, {512, 1, false},
        {1024, 3, false},
    };
}

namespace {

template <typename T>
ConvBlockT<T> make_block(const ConvSpec& spec, bool norm, bool act, bool pool,
                         Rng& rng, bool conv3 = false) {
    ConvBlockT<T> b;
    b.spec = spec;
    std::vector<int> wshape;
    if (conv3)
        wshape = {spec.out_channels, spec.in_channels, spec.kt, spec.kh, spec.kw};
    else
        wshape = {spec.out_channels, spec.in_channels, spec.kh, spec.kw};
    const double fan_in =
        static_cast<double>(spec.in_channels) * spec.kt * spec.kh * spec.kw;
    const double bound = std::sqrt(2.0 / fan_in);
    b.weight = TensorT<T>::uniform(wshape, rng, -bound, bound);
    b.bias = TensorT<T>({spec.out_channels});
    b.has_norm = norm;
    b.has_act = act;
    b.pool = pool;
    if (norm) {
        b.scale = TensorT<T>::full({spec.out_channels}, T(1));
        b.shift = TensorT<T>({spec.out_channels});
        b.running_mean = TensorT<T>({spec.out_channels});
        b.running_var = TensorT<T>::full({spec.out_channels}, T(1));
    }
    return b;
}

template <typename T>
std::int64_t block_param_count(const ConvBlockT<T>& b) {
    std::int64_t n = b.weight.size() + b.bias.size();
    if (b.has_norm) n += b.scale.size() + b.shift.size();
    return n;
}

// Trainable parameter count of the 3D temporal stack, from arithmetic alone.
std::int64_t temporal3d_param_count(const ModelConfig& cfg) {
    const int cb = cfg.backbone_out_channels();
    const int cf = cfg.fused_channels();
    std::int64_t total = 0;
    int in_ch = cb;
    for (const TemporalLayer& l : cfg.temporal) {
        total += static_cast<std::int64_t>(cf) * in_ch * l.kt * l.khw * l.khw + cf;
        if (cfg.norm) total += 2 * cf;
        in_ch = cf;
    }
    return total;
}

// Inner width for the 2D replacement stack that best matches the 3D stack's
// trainable parameter count.
int solve_baseline_width(const ModelConfig& cfg) {
    const int cb = cfg.backbone_out_channels();
    const int cf = cfg.fused_channels();
    const std::int64_t target = temporal3d_param_count(cfg);
    const int layers = static_cast<int>(cfg.temporal.size());
    if (layers == 1) return cf;

    auto count_2d = [&](int m) {
        std::int64_t total = 0;
        int in_ch = cb;
        for (int i = 0; i < layers; ++i) {
            int out_ch = (i == layers - 1) ? cf : m;
            int k = cfg.temporal[static_cast<size_t>(i)].khw;
            total += static_cast<std::int64_t>(out_ch) * in_ch * k * k + out_ch;
            if (cfg.norm) total += 2 * out_ch;
            in_ch = out_ch;
        }
        return total;
    };

    int best_m = 1;
    std::int64_t best_diff = std::numeric_limits<std::int64_t>::max();
    const int cap = std::max(16, 8 * std::max(cb, cf));
    for (int m = 1; m <= cap; ++m) {
        std::int64_t diff = std::llabs(count_2d(m) - target);
        if (diff < best_diff) {
            best_diff = diff;
            best_m = m;
        }
    }
    return best_m;
}

}  // namespace

template <typename T>
DetNetT<T> DetNetT<T>::build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DetNetT<T> model;
    model.cfg_ = cfg;
    model.seed_ = seed;
    Rng rng(seed);

    int in_ch = cfg.in_channels;
    for (const BackboneBlock& b : cfg.backbone) {
        ConvSpec spec = ConvSpec::conv2d(in_ch, b.channels, b.kernel, 1,
                                         b.kernel / 2);
        model.backbone.push_back(
            make_block<T>(spec, cfg.norm, true, b.pool, rng));
        in_ch = b.channels;
    }

    const int cb = cfg.backbone_out_channels();
    const int cf = cfg.fused_channels();
    if (cfg.baseline_2d) {
        const int m = solve_baseline_width(cfg);
        const int layers = static_cast<int>(cfg.temporal.size());
        int tc_in = cb;
        for (int i = 0; i < layers; ++i) {
            int out_ch = (i == layers - 1) ? cf : m;
            int k = cfg.temporal[static_cast<size_t>(i)].khw;
            ConvSpec spec = ConvSpec::conv2d(tc_in, out_ch, k, 1, k / 2);
            model.temporal.push_back(
                make_block<T>(spec, cfg.norm, true, false, rng));
            tc_in = out_ch;
        }
    } else {
        int tc_in = cb;
        for (const TemporalLayer& l : cfg.temporal) {
            ConvSpec spec =
                ConvSpec::conv3d(tc_in, cf, l.kt, l.khw, l.pt, l.khw / 2);
            model.temporal.push_back(
                make_block<T>(spec, cfg.norm, true, false, rng, true));
            tc_in = cf;
        }
    }

    const int out_ch = cfg.num_anchors * (5 + cfg.num_classes);
    model.head.push_back(make_block<T>(ConvSpec::conv2d(cf, cfg.head_channels, 3, 1, 1),
                                       cfg.norm, true, false, rng));
    model.head.push_back(
        make_block<T>(ConvSpec::conv2d(cfg.head_channels, cfg.head_channels, 3, 1, 1),
                      cfg.norm, true, false, rng));
    ConvBlockT<T> last = make_block<T>(
        ConvSpec::conv2d(cfg.head_channels, out_ch, 1, 1, 0), false, false,
        false, rng);
    model.head.push_back(std::move(last));
    return model;
}

// params(), state_tensors(), and forward() must all walk blocks in this same
// order: backbone, temporal, head; per block weight, bias, scale, shift.
template <typename T>
std::vector<ParamRefT<T>> DetNetT<T>::params() {
    std::vector<ParamRefT<T>> out;
    auto add_stage = [&](const char* stage, std::vector<ConvBlockT<T>>& blocks) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            std::string p = std::string(stage) + "." + std::to_string(i);
            out.push_back({p + ".weight", &blocks[i].weight, true});
            out.push_back({p + ".bias", &blocks[i].bias, false});
            if (blocks[i].has_norm) {
                out.push_back({p + ".scale", &blocks[i].scale, false});
                out.push_back({p + ".shift", &blocks[i].shift, false});
            }
        }
    };
    add_stage("backbone", backbone);
    add_stage("temporal", temporal);
    add_stage("head", head);
    return out;
}

template <typename T>
std::vector<ParamRefT<T>> DetNetT<T>::state_tensors() {
    std::vector<ParamRefT<T>> out;
    auto add_stage = [&](const char* stage, std::vector<ConvBlockT<T>>& blocks) {
        for (size_t i = 0; i < blocks.size(); ++i) {
            std::string p = std::string(stage) + "." + std::to_string(i);
            out.push_back({p + ".weight", &blocks[i].weight, true});
            out.push_back({p + ".bias", &blocks[i].bias, false});
            if (blocks[i].has_norm) {
                out.push_back({p + ".scale", &blocks[i].scale, false});
                out.push_back({p + ".shift", &blocks[i].shift, false});
                out.push_back({p + ".running_mean", &blocks[i].running_mean, false});
                out.push_back({p + ".running_var", &blocks[i].running_var, false});
            }
        }
    };
    add_stage("backbone", backbone);
    add_stage("temporal", temporal);
    add_stage("head", head);
    return out;
}

template <typename T>
std::int64_t DetNetT<T>::param_count() {
    std::int64_t total = 0;
    for (const auto& b : backbone) total += block_param_count(b);
    for (const auto& b : temporal) total += block_param_count(b);
    for (const auto& b : head) total += block_param_count(b);
    return total;
}

template <typename T>
ForwardIdsT<T> DetNetT<T>::forward(TapeT<T>& tape, const TensorT<T>& input,
                                   NormMode mode) {
    using Id = typename TapeT<T>::Id;
    DETNET_CHECK_T(input.rank() == 5, shape_error,
                   "forward expects [N,T,C,H,W], got " << input.shape_str());
    const int n = input.dim(0), t = input.dim(1);
    DETNET_CHECK_T(t == cfg_.frames, shape_error,
                   "input has " << t << " frames, config expects " << cfg_.frames);
    DETNET_CHECK_T(input.dim(2) == cfg_.in_channels, shape_error,
                   "input has " << input.dim(2) << " channels, config expects "
                                << cfg_.in_channels);
    const int h = input.dim(3), w = input.dim(4);
    DETNET_CHECK_T(h == cfg_.height && w == cfg_.width, shape_error,
                   "input frames are " << h << "x" << w << ", config expects "
                                       << cfg_.height << "x" << cfg_.width);

    ForwardIdsT<T> ids;
    ids.input = tape.leaf(input);

    struct BlockIds {
        Id w, b, scale = -1, shift = -1;
    };
    auto leaf_stage = [&](std::vector<ConvBlockT<T>>& blocks) {
        std::vector<BlockIds> out;
        for (auto& blk : blocks) {
            BlockIds bi;
            bi.w = tape.leaf(blk.weight);
            bi.b = tape.leaf(blk.bias);
            ids.param_ids.push_back(bi.w);
            ids.param_ids.push_back(bi.b);
            if (blk.has_norm) {
                bi.scale = tape.leaf(blk.scale);
                bi.shift = tape.leaf(blk.shift);
                ids.param_ids.push_back(bi.scale);
                ids.param_ids.push_back(bi.shift);
            }
            out.push_back(bi);
        }
        return out;
    };
    std::vector<BlockIds> bb_ids = leaf_stage(backbone);
    std::vector<BlockIds> tp_ids = leaf_stage(temporal);
    std::vector<BlockIds> hd_ids = leaf_stage(head);

    auto run_block = [&](Id x, ConvBlockT<T>& blk, const BlockIds& bi,
                         bool conv3) {
        Id y = conv3 ? tape.conv3d(x, bi.w, bi.b, blk.spec)
                     : tape.conv2d(x, bi.w, bi.b, blk.spec);
        if (blk.has_norm) {
            if (mode == NormMode::kTrain)
                y = tape.channel_norm(y, bi.scale, bi.shift, blk.running_mean,
                                      blk.running_var, T(cfg_.norm_momentum));
            else
                y = tape.channel_norm_infer(y, bi.scale, bi.shift,
                                            blk.running_mean, blk.running_var);
        }
        if (blk.has_act) y = tape.leaky_relu(y, T(cfg_.leaky_slope));
        if (blk.pool) y = tape.maxpool2d(y);
        return y;
    };

    Id x = tape.reshape(ids.input, {n * t, cfg_.in_channels, h, w});
    for (size_t i = 0; i < backbone.size(); ++i)
        x = run_block(x, backbone[i], bb_ids[i], false);

    if (cfg_.baseline_2d) {
        x = tape.select_frame(x, n, t, cfg_.reference_frame());
        for (size_t i = 0; i < temporal.size(); ++i)
            x = run_block(x, temporal[i], tp_ids[i], false);
    } else {
        x = tape.stack_time(x, n, t);
        for (size_t i = 0; i < temporal.size(); ++i)
            x = run_block(x, temporal[i], tp_ids[i], true);
        const auto& fused = tape.value(x);
        DETNET_CHECK_T(fused.dim(2) == 1, shape_error,
                       "temporal stage left T=" << fused.dim(2));
        x = tape.reshape(x, {n, fused.dim(1), fused.dim(3), fused.dim(4)});
    }

    for (size_t i = 0; i < head.size(); ++i)
        x = run_block(x, head[i], hd_ids[i], false);
    ids.head = x;
    return ids;
}

template <typename T>
TensorT<T> DetNetT<T>::infer(const TensorT<T>& input) {
    TapeT<T> tape;
    ForwardIdsT<T> ids = forward(tape, input, NormMode::kInfer);
    return tape.value(ids.head);
}

template <typename T>
std::vector<std::vector<Detection>> DetNetT<T>::predict(const TensorT<T>& input,
                                                        float score_thresh,
                                                        float nms_thresh) {
    DETNET_CHECK_T(static_cast<int>(cfg_.anchors.size()) == cfg_.num_anchors,
                   config_error,
                   "predict needs " << cfg_.num_anchors
                                    << " anchor priors in the config, got "
                                    << cfg_.anchors.size());
    TensorT<T> out = infer(input);
    Tensor head_f = out.template cast<float>();
    std::vector<std::vector<Detection>> result;
    const float stride = static_cast<float>(cfg_.stride());
    for (int i = 0; i < head_f.dim(0); ++i) {
        std::vector<Detection> dets =
            decode_grid(head_f, i, cfg_.anchors, cfg_.num_classes, stride,
                        score_thresh);
        result.push_back(nms(dets, nms_thresh));
    }
    return result;
}

template class DetNetT<float>;
template class DetNetT<double>;

}  // namespace detnet
