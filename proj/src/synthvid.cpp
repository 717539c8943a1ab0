#include "detnet/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "detnet/errors.hpp"

namespace detnet {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
    DETNET_CHECK_T(width >= 8 && height >= 8, config_error,
                   "frame extents must be at least 8 px");
    DETNET_CHECK_T(frames >= 1, config_error, "need at least one frame");
    DETNET_CHECK_T(min_objects >= 0 && max_objects >= min_objects, config_error,
                   "bad object count range");
    DETNET_CHECK_T(min_speed >= 0.f && max_speed >= min_speed, config_error,
                   "bad velocity range");
    DETNET_CHECK_T(min_size > 0.f && max_size >= min_size, config_error,
                   "bad size range");
    DETNET_CHECK_T(max_size <= 0.8f * static_cast<float>(std::min(width, height)),
                   config_error,
                   "max object size " << max_size
                       << " cannot stay inside a " << width << "x" << height
                       << " frame");
    DETNET_CHECK_T(jitter >= 0.f, config_error, "jitter must be non-negative");
    DETNET_CHECK_T(shutter >= 0.f && shutter <= 1.f, config_error,
                   "shutter must lie in [0,1]");
    DETNET_CHECK_T(min_defocus >= 0.f && max_defocus >= min_defocus, config_error,
                   "bad defocus range");
    DETNET_CHECK_T(noise >= 0.f, config_error, "noise must be non-negative");
    DETNET_CHECK_T(brightness > 0.f && brightness <= 1.f, config_error,
                   "brightness must lie in (0,1]");
    DETNET_CHECK_T(background >= 0.f && background <= 1.f, config_error,
                   "background must lie in [0,1]");
    DETNET_CHECK_T(num_classes == 1 || num_classes == 2, config_error,
                   "num_classes must be 1 or 2");
}

void apply_scenario(SceneSpec& spec, const std::string& tag) {
    spec.scenario = tag;
    if (tag == "clean") {
        spec.shutter = 0.f;
        spec.min_defocus = spec.max_defocus = 0.f;
        spec.noise = 0.02f;
        spec.brightness = 1.f;
    } else if (tag == "blur") {
        spec.shutter = 0.9f;
        spec.min_defocus = spec.max_defocus = 0.f;
        spec.noise = 0.03f;
        spec.brightness = 1.f;
    } else if (tag == "defocus") {
        spec.shutter = 0.f;
        spec.min_defocus = 1.0f;
        spec.max_defocus = 2.5f;
        spec.noise = 0.03f;
        spec.brightness = 1.f;
    } else if (tag == "dark") {
        spec.shutter = 0.f;
        spec.min_defocus = spec.max_defocus = 0.f;
        spec.noise = 0.06f;
        spec.brightness = 0.3f;
    } else {
        throw config_error("unknown scenario tag: " + tag);
    }
}

void to_json(nlohmann::json& j, const SceneSpec& spec) {
    j = nlohmann::json{{"width", spec.width},
                       {"height", spec.height},
                       {"frames", spec.frames},
                       {"min_objects", spec.min_objects},
                       {"max_objects", spec.max_objects},
                       {"min_speed", spec.min_speed},
                       {"max_speed", spec.max_speed},
                       {"min_size", spec.min_size},
                       {"max_size", spec.max_size},
                       {"jitter", spec.jitter},
                       {"shutter", spec.shutter},
                       {"min_defocus", spec.min_defocus},
                       {"max_defocus", spec.max_defocus},
                       {"noise", spec.noise},
                       {"brightness", spec.brightness},
                       {"background", spec.background},
                       {"num_classes", spec.num_classes},
                       {"scenario", spec.scenario},
                       {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, SceneSpec& spec) {
    SceneSpec def;
    spec.width = j.value("width", def.width);
    spec.height = j.value("height", def.height);
    spec.frames = j.value("frames", def.frames);
    spec.min_objects = j.value("min_objects", def.min_objects);
    spec.max_objects = j.value("max_objects", def.max_objects);
    spec.min_speed = j.value("min_speed", def.min_speed);
    spec.max_speed = j.value("max_speed", def.max_speed);
    spec.min_size = j.value("min_size", def.min_size);
    spec.max_size = j.value("max_size", def.max_size);
    spec.jitter = j.value("jitter", def.jitter);
    spec.shutter = j.value("shutter", def.shutter);
    spec.min_defocus = j.value("min_defocus", def.min_defocus);
    spec.max_defocus = j.value("max_defocus", def.max_defocus);
    spec.noise = j.value("noise", def.noise);
    spec.brightness = j.value("brightness", def.brightness);
    spec.background = j.value("background", def.background);
    spec.num_classes = j.value("num_classes", def.num_classes);
    spec.scenario = j.value("scenario", def.scenario);
    spec.seed = j.value("seed", def.seed);
}

namespace {

// Slight per-channel tint so the three channels carry distinct values.
constexpr float kTint[3] = {1.f, 0.96f, 0.92f};

float overlap1d(float p0, float p1, float r0, float r1) {
    float v = std::min(p1, r1) - std::max(p0, r0);
    return v > 0.f ? v : 0.f;
}

// Coverage-weighted paint of one rectangle into a [3,H,W] image.
void draw_rect(std::vector<float>& img, int w, int h, const Box& b, float shade) {
    const float x0 = b.x - 0.5f * b.w, x1 = b.x + 0.5f * b.w;
    const float y0 = b.y - 0.5f * b.h, y1 = b.y + 0.5f * b.h;
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int ix1 = std::min(w - 1, static_cast<int>(std::floor(x1)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int iy1 = std::min(h - 1, static_cast<int>(std::floor(y1)));
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    for (int iy = iy0; iy <= iy1; ++iy) {
        const float cov_y = overlap1d(static_cast<float>(iy),
                                      static_cast<float>(iy) + 1.f, y0, y1);
        for (int ix = ix0; ix <= ix1; ++ix) {
            const float cov = cov_y * overlap1d(static_cast<float>(ix),
                                                static_cast<float>(ix) + 1.f,
                                                x0, x1);
            if (cov <= 0.f) continue;
            const std::size_t p = static_cast<std::size_t>(iy) * w + ix;
            for (int c = 0; c < 3; ++c) {
                float& v = img[static_cast<std::size_t>(c) * plane + p];
                v = v * (1.f - cov) + shade * kTint[c] * cov;
            }
        }
    }
}

std::vector<float> render_still(const SceneSpec& spec,
                                const std::vector<ObjectState>& objs,
                                const std::vector<std::pair<float, float>>& at) {
    std::vector<float> img(static_cast<std::size_t>(3) * spec.height * spec.width,
                           spec.background);
    for (std::size_t i = 0; i < objs.size(); ++i) {
        Box b = objs[i].box;
        b.x = at[i].first;
        b.y = at[i].second;
        draw_rect(img, spec.width, spec.height, b, objs[i].shade);
    }
    return img;
}

// Normalized disk blur; replicated edges.
std::vector<float> defocus_blur(const std::vector<float>& img, int w, int h,
                                float radius) {
    if (radius < 0.5f) return img;
    const int r = static_cast<int>(std::ceil(radius));
    std::vector<std::pair<int, int>> taps;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (static_cast<float>(dx * dx + dy * dy) <= radius * radius)
                taps.push_back({dx, dy});
    const float inv = 1.f / static_cast<float>(taps.size());
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    std::vector<float> out(img.size());
    for (int c = 0; c < 3; ++c) {
        const float* src = img.data() + static_cast<std::size_t>(c) * plane;
        float* dst = out.data() + static_cast<std::size_t>(c) * plane;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float acc = 0.f;
                for (const auto& [dx, dy] : taps) {
                    int sx = std::clamp(x + dx, 0, w - 1);
                    int sy = std::clamp(y + dy, 0, h - 1);
                    acc += src[static_cast<std::size_t>(sy) * w + sx];
                }
                dst[static_cast<std::size_t>(y) * w + x] = acc * inv;
            }
        }
    }
    return out;
}

void reflect_axis(float& pos, float& vel, float lo, float hi) {
    // margin band degenerate (lo >= hi) can't happen: validate() caps sizes
    int guard = 0;
    while ((pos < lo || pos > hi) && guard++ < 64) {
        if (pos < lo) {
            pos = 2.f * lo - pos;
            vel = -vel;
        } else {
            pos = 2.f * hi - pos;
            vel = -vel;
        }
    }
}

}  // namespace

SequenceSample render_sequence(const SceneSpec& spec,
                               std::vector<ObjectState> objects, Rng& rng) {
    spec.validate();
    const int w = spec.width, h = spec.height, t = spec.frames;
    SequenceSample out;
    out.frames = Tensor({std::max(t, 1), 3, h, w});
    out.gt.resize(static_cast<std::size_t>(t));
    out.scenario = spec.scenario;
    out.seed = spec.seed;

    const std::size_t frame_sz = static_cast<std::size_t>(3) * h * w;
    const int subs = spec.shutter > 0.f ? 6 : 1;

    for (int f = 0; f < t; ++f) {
        // ground truth is the unblurred rectangle at the frame instant
        for (const ObjectState& o : objects)
            out.gt[static_cast<std::size_t>(f)].push_back(
                GroundTruth{o.box, o.class_id});

        // shutter smear: average stills displaced backwards along velocity
        std::vector<float> acc(frame_sz, 0.f);
        for (int s = 0; s < subs; ++s) {
            const float back =
                subs == 1 ? 0.f
                          : spec.shutter * static_cast<float>(s) /
                                static_cast<float>(subs - 1);
            std::vector<std::pair<float, float>> at;
            at.reserve(objects.size());
            for (const ObjectState& o : objects)
                at.push_back({o.box.x - o.vx * back, o.box.y - o.vy * back});
            std::vector<float> still = render_still(spec, objects, at);
            for (std::size_t i = 0; i < frame_sz; ++i) acc[i] += still[i];
        }
        const float inv_subs = 1.f / static_cast<float>(subs);
        for (std::size_t i = 0; i < frame_sz; ++i) acc[i] *= inv_subs;

        if (spec.max_defocus > 0.f) {
            const float radius = static_cast<float>(
                rng.uniform(spec.min_defocus, spec.max_defocus));
            acc = defocus_blur(acc, w, h, radius);
        }

        float* dst = out.frames.data() + static_cast<std::int64_t>(f) * frame_sz;
        if (spec.noise > 0.f) {
            for (std::size_t i = 0; i < frame_sz; ++i) {
                float v = acc[i] * spec.brightness +
                          static_cast<float>(rng.normal()) * spec.noise;
                dst[i] = std::clamp(v, 0.f, 1.f);
            }
        } else {
            for (std::size_t i = 0; i < frame_sz; ++i)
                dst[i] = std::clamp(acc[i] * spec.brightness, 0.f, 1.f);
        }

        // advance to the next frame instant
        for (ObjectState& o : objects) {
            if (spec.jitter > 0.f) {
                o.vx += static_cast<float>(rng.normal()) * spec.jitter;
                o.vy += static_cast<float>(rng.normal()) * spec.jitter;
            }
            o.box.x += o.vx;
            o.box.y += o.vy;
            const float mx = 0.25f * o.box.w, my = 0.25f * o.box.h;
            reflect_axis(o.box.x, o.vx, mx, static_cast<float>(w) - mx);
            reflect_axis(o.box.y, o.vy, my, static_cast<float>(h) - my);
        }
    }
    return out;
}

SequenceSample generate_sequence(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int n = rng.uniform_int(spec.min_objects, spec.max_objects);
    std::vector<ObjectState> objects;
    for (int i = 0; i < n; ++i) {
        ObjectState o;
        o.box.w = static_cast<float>(rng.uniform(spec.min_size, spec.max_size));
        o.box.h = static_cast<float>(rng.uniform(spec.min_size, spec.max_size));
        o.class_id = spec.num_classes == 2 ? rng.uniform_int(0, 1) : 0;
        o.shade = o.class_id == 0 ? static_cast<float>(rng.uniform(0.7, 0.9))
                                  : static_cast<float>(rng.uniform(0.08, 0.22));
        const double speed = rng.uniform(spec.min_speed, spec.max_speed);
        const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        o.vx = static_cast<float>(speed * std::cos(angle));
        o.vy = static_cast<float>(speed * std::sin(angle));
        const float mx = 0.25f * o.box.w, my = 0.25f * o.box.h;
        o.box.x = static_cast<float>(
            rng.uniform(mx, static_cast<double>(spec.width) - mx));
        o.box.y = static_cast<float>(
            rng.uniform(my, static_cast<double>(spec.height) - my));
        objects.push_back(o);
    }
    return render_sequence(spec, std::move(objects), rng);
}

void DatasetSpec::validate() const {
    base.validate();
    DETNET_CHECK_T(sequences >= 1, config_error, "need at least one sequence");
    DETNET_CHECK_T(!mix.empty(), config_error, "scenario mix is empty");
    float total = 0.f;
    for (const auto& [tag, frac] : mix) {
        DETNET_CHECK_T(frac >= 0.f, config_error,
                       "negative mix fraction for " << tag);
        total += frac;
    }
    DETNET_CHECK_T(total > 0.f, config_error, "scenario mix sums to zero");
}

std::vector<std::string> DatasetSpec::scenario_of_each() const {
    validate();
    float total = 0.f;
    for (const auto& [tag, frac] : mix) total += frac;
    // largest-remainder apportionment, ties to earlier mix entries
    std::vector<int> count(mix.size(), 0);
    std::vector<float> rem(mix.size(), 0.f);
    int used = 0;
    for (std::size_t i = 0; i < mix.size(); ++i) {
        float exact = static_cast<float>(sequences) * mix[i].second / total;
        count[i] = static_cast<int>(std::floor(exact));
        rem[i] = exact - static_cast<float>(count[i]);
        used += count[i];
    }
    while (used < sequences) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < mix.size(); ++i)
            if (rem[i] > rem[best]) best = i;
        ++count[best];
        rem[best] = -1.f;
        ++used;
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < mix.size(); ++i)
        for (int c = 0; c < count[i]; ++c) out.push_back(mix[i].first);
    return out;
}

void to_json(nlohmann::json& j, const DatasetSpec& spec) {
    j = nlohmann::json::object();
    j["base"] = spec.base;
    j["sequences"] = spec.sequences;
    j["master_seed"] = spec.master_seed;
    j["mix"] = nlohmann::json::object();
    for (const auto& [tag, frac] : spec.mix) j["mix"][tag] = frac;
}

void from_json(const nlohmann::json& j, DatasetSpec& spec) {
    DatasetSpec def;
    if (j.contains("base")) spec.base = j.at("base").get<SceneSpec>();
    spec.sequences = j.value("sequences", def.sequences);
    spec.master_seed = j.value("master_seed", def.master_seed);
    if (j.contains("mix")) {
        spec.mix.clear();
        for (const auto& [tag, frac] : j.at("mix").items())
            spec.mix.push_back({tag, frac.get<float>()});
        std::sort(spec.mix.begin(), spec.mix.end());
    }
}

Dataset generate_dataset(const DatasetSpec& spec) {
    std::vector<std::string> tags = spec.scenario_of_each();
    Dataset ds;
    ds.width = spec.base.width;
    ds.height = spec.base.height;
    ds.frames = spec.base.frames;
    ds.num_classes = spec.base.num_classes;
    ds.master_seed = spec.master_seed;
    for (int i = 0; i < spec.sequences; ++i) {
        SceneSpec s = spec.base;
        apply_scenario(s, tags[static_cast<std::size_t>(i)]);
        s.seed = Rng::derive(spec.master_seed, static_cast<std::uint64_t>(i));
        SequenceSample seq = generate_sequence(s);
        seq.id = i;
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

namespace {

std::string seq_dir_name(int id) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "seq_%03d", id);
    return buf;
}

std::string frame_file_name(int f) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.ppm", f);
    return buf;
}

void write_ppm(const std::string& path, const Tensor& frames, int f, int h,
               int w) {
    std::ofstream out(path, std::ios::binary);
    DETNET_CHECK_T(out.is_open(), data_error, "cannot write frame " << path);
    out << "P6\n" << w << " " << h << "\n255\n";
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const float* base = frames.data() + static_cast<std::int64_t>(f) * 3 * plane;
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = base[c * plane + static_cast<std::int64_t>(y) * w + x];
                int q = static_cast<int>(std::lround(v * 255.f));
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::clamp(q, 0, 255));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
}

void read_ppm(const std::string& path, Tensor& frames, int f, int h, int w) {
    std::ifstream in(path, std::ios::binary);
    DETNET_CHECK_T(in.is_open(), data_error, "missing frame file " << path);
    std::string magic;
    int pw = 0, ph = 0, maxval = 0;
    in >> magic >> pw >> ph >> maxval;
    DETNET_CHECK_T(magic == "P6" && maxval == 255, data_error,
                   "bad PPM header in " << path);
    DETNET_CHECK_T(pw == w && ph == h, data_error,
                   "frame " << path << " is " << pw << "x" << ph
                            << ", manifest says " << w << "x" << h);
    in.get();  // the single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
    DETNET_CHECK_T(in.gcount() == static_cast<std::streamsize>(buf.size()),
                   data_error, "truncated PPM " << path);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    float* base = frames.data() + static_cast<std::int64_t>(f) * 3 * plane;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                base[c * plane + static_cast<std::int64_t>(y) * w + x] =
                    static_cast<float>(
                        buf[(static_cast<std::size_t>(y) * w + x) * 3 +
                            static_cast<std::size_t>(c)]) /
                    255.f;
}

}  // namespace

void export_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["width"] = ds.width;
    manifest["height"] = ds.height;
    manifest["frames"] = ds.frames;
    manifest["num_classes"] = ds.num_classes;
    manifest["master_seed"] = ds.master_seed;
    manifest["sequences"] = ds.sequences.size();
    manifest["items"] = nlohmann::json::array();
    for (const SequenceSample& seq : ds.sequences)
        manifest["items"].push_back({{"id", seq.id},
                                     {"scenario", seq.scenario},
                                     {"seed", seq.seed}});
    std::ofstream mf(dir + "/manifest.json");
    DETNET_CHECK_T(mf.is_open(), data_error, "cannot write manifest in " << dir);
    mf << manifest.dump(2) << "\n";

    std::ofstream ann(dir + "/annotations.jsonl");
    DETNET_CHECK_T(ann.is_open(), data_error,
                   "cannot write annotations in " << dir);
    for (const SequenceSample& seq : ds.sequences) {
        const std::string sd = dir + "/" + seq_dir_name(seq.id);
        fs::create_directories(sd);
        for (int f = 0; f < ds.frames; ++f) {
            write_ppm(sd + "/" + frame_file_name(f), seq.frames, f, ds.height,
                      ds.width);
            nlohmann::json line;
            line["seq"] = seq.id;
            line["frame"] = f;
            line["boxes"] = nlohmann::json::array();
            for (const GroundTruth& g : seq.gt[static_cast<std::size_t>(f)])
                line["boxes"].push_back({{"cx", g.box.x},
                                         {"cy", g.box.y},
                                         {"w", g.box.w},
                                         {"h", g.box.h},
                                         {"class", g.class_id}});
            ann << line.dump() << "\n";
        }
    }
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    DETNET_CHECK_T(mf.is_open(), data_error,
                   "missing manifest.json in " << dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error("bad manifest.json in " + dir + ": " + e.what());
    }

    Dataset ds;
    ds.width = manifest.at("width").get<int>();
    ds.height = manifest.at("height").get<int>();
    ds.frames = manifest.at("frames").get<int>();
    ds.num_classes = manifest.value("num_classes", 1);
    ds.master_seed = manifest.value("master_seed", std::uint64_t{0});

    // annotations keyed by (seq, frame)
    std::ifstream ann(dir + "/annotations.jsonl");
    DETNET_CHECK_T(ann.is_open(), data_error,
                   "missing annotations.jsonl in " << dir);
    std::map<std::pair<int, int>, std::vector<GroundTruth>> boxes;
    std::string line;
    int line_no = 0;
    while (std::getline(ann, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw data_error("bad annotation line " + std::to_string(line_no) +
                             " in " + dir + ": " + e.what());
        }
        const int seq = j.at("seq").get<int>();
        const int frame = j.at("frame").get<int>();
        std::vector<GroundTruth> gts;
        for (const auto& b : j.at("boxes"))
            gts.push_back(GroundTruth{Box{b.at("cx").get<float>(),
                                          b.at("cy").get<float>(),
                                          b.at("w").get<float>(),
                                          b.at("h").get<float>()},
                                      b.value("class", 0)});
        boxes[{seq, frame}] = std::move(gts);
    }

    for (const auto& item : manifest.at("items")) {
        SequenceSample seq;
        seq.id = item.at("id").get<int>();
        seq.scenario = item.value("scenario", "clean");
        seq.seed = item.value("seed", std::uint64_t{0});
        seq.frames = Tensor({ds.frames, 3, ds.height, ds.width});
        const std::string sd = dir + "/" + seq_dir_name(seq.id);
        bool any_ann = false;
        for (int f = 0; f < ds.frames; ++f) {
            read_ppm(sd + "/" + frame_file_name(f), seq.frames, f, ds.height,
                     ds.width);
            auto it = boxes.find({seq.id, f});
            DETNET_CHECK_T(it != boxes.end(), data_error,
                           "no annotations for sequence " << seq.id << " frame "
                                                          << f << " in " << dir);
            any_ann = true;
            seq.gt.push_back(it->second);
        }
        (void)any_ann;
        ds.sequences.push_back(std::move(seq));
    }
    return ds;
}

}  // namespace detnet
