#include "detnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "detnet/errors.hpp"

namespace detnet {

namespace {

void write_f32_le(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    char b[4] = {static_cast<char>(bits & 0xff),
                 static_cast<char>((bits >> 8) & 0xff),
                 static_cast<char>((bits >> 16) & 0xff),
                 static_cast<char>((bits >> 24) & 0xff)};
    os.write(b, 4);
}

float read_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                         (static_cast<std::uint32_t>(b[1]) << 8) |
                         (static_cast<std::uint32_t>(b[2]) << 16) |
                         (static_cast<std::uint32_t>(b[3]) << 24);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

nlohmann::json read_header(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    DETNET_CHECK_T(in.good() && std::memcmp(magic, kCheckpointMagic, 8) == 0,
                   data_error, "not a checkpoint file (bad magic): " << path);
    std::string line;
    DETNET_CHECK_T(static_cast<bool>(std::getline(in, line)), data_error,
                   "checkpoint header missing in " << path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw data_error("checkpoint header in " + path +
                         " is not valid JSON: " + e.what());
    }
    return header;
}

void load_payloads(DetNet& model, const nlohmann::json& header,
                   std::ifstream& in, const std::string& path) {
    auto tensors = model.state_tensors();
    const auto& list = header.at("tensors");
    DETNET_CHECK_T(list.size() == tensors.size(), data_error,
                   "checkpoint " << path << " holds " << list.size()
                                 << " tensors, model has " << tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) {
        const auto& entry = list[i];
        const std::string name = entry.at("name").get<std::string>();
        std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        DETNET_CHECK_T(name == tensors[i].name, data_error,
                       "checkpoint tensor " << i << " is '" << name
                                            << "', model expects '"
                                            << tensors[i].name << "'");
        DETNET_CHECK_T(shape == tensors[i].tensor->shape(), shape_error,
                       "checkpoint tensor '" << name << "' has shape "
                           << Tensor::shape_str(shape) << " but the model expects "
                           << tensors[i].tensor->shape_str());
        Tensor& t = *tensors[i].tensor;
        for (std::int64_t j = 0; j < t.size(); ++j) t[j] = read_f32_le(in);
        DETNET_CHECK_T(in.good(), data_error,
                       "checkpoint " << path << " truncated inside tensor '"
                                     << name << "'");
    }
}

}  // namespace

void save_checkpoint(DetNet& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    DETNET_CHECK_T(out.is_open(), data_error,
                   "cannot open checkpoint for writing: " << path);
    out.write(kCheckpointMagic, 8);

    auto tensors = model.state_tensors();
    nlohmann::json header;
    header["config"] = model.config();
    header["seed"] = model.seed();
    header["tensors"] = nlohmann::json::array();
    for (const auto& t : tensors)
        header["tensors"].push_back(
            {{"name", t.name}, {"shape", t.tensor->shape()}});
    out << header.dump() << "\n";

    for (const auto& t : tensors)
        for (std::int64_t i = 0; i < t.tensor->size(); ++i)
            write_f32_le(out, (*t.tensor)[i]);
    DETNET_CHECK_T(out.good(), data_error, "write failed for checkpoint " << path);
}

DetNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    DETNET_CHECK_T(in.is_open(), data_error, "cannot open checkpoint: " << path);
    nlohmann::json header = read_header(in, path);
    ModelConfig cfg = header.at("config").get<ModelConfig>();
    std::uint64_t seed = header.value("seed", std::uint64_t{0});
    DetNet model = DetNet::build(cfg, seed);
    load_payloads(model, header, in, path);
    return model;
}

void load_checkpoint_into(DetNet& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    DETNET_CHECK_T(in.is_open(), data_error, "cannot open checkpoint: " << path);
    nlohmann::json header = read_header(in, path);
    load_payloads(model, header, in, path);
}

}  // namespace detnet
