#include "infoseg/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

namespace infoseg {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'I', 'N', 'F', 'O', 'S', 'E', 'G', '1'};
constexpr std::uint32_t kVersion = 1;

json network_to_json(const NetworkConfig& n) {
    return json{{"input_channels", n.input_channels},
                {"feature_dim", n.feature_dim},
                {"num_classes", n.num_classes},
                {"downsampling", n.downsampling},
                {"block_a_widths", n.block_a_widths},
                {"block_b_widths", n.block_b_widths},
                {"init_seed", n.init_seed}};
}

NetworkConfig network_from_json(const json& j) {
    NetworkConfig n;
    n.input_channels = j.at("input_channels").get<int>();
    n.feature_dim = j.at("feature_dim").get<int>();
    n.num_classes = j.at("num_classes").get<int>();
    n.downsampling = j.at("downsampling").get<int>();
    auto wa = j.at("block_a_widths").get<std::vector<int>>();
    auto wb = j.at("block_b_widths").get<std::vector<int>>();
    if (wa.size() != 4 || wb.size() != 2)
        throw ConfigError("network config: wrong width list lengths");
    std::copy(wa.begin(), wa.end(), n.block_a_widths.begin());
    std::copy(wb.begin(), wb.end(), n.block_b_widths.begin());
    n.init_seed = j.at("init_seed").get<std::uint64_t>();
    return n;
}

json config_to_json_obj(const TrainConfig& cfg) {
    return json{{"network", network_to_json(cfg.network)},
                {"lr", cfg.lr},
                {"batch_size", cfg.batch_size},
                {"tau", cfg.tau},
                {"estimator", to_string(cfg.estimator)},
                {"assignment", to_string(cfg.assignment)},
                {"objective", to_string(cfg.objective)},
                {"max_steps", cfg.max_steps},
                {"seed", cfg.seed},
                {"checkpoint_every", cfg.checkpoint_every},
                {"iic_jitter", cfg.iic_jitter},
                {"iic_max_shift_cells", cfg.iic_max_shift_cells}};
}

TrainConfig config_from_json_obj(const json& j) {
    TrainConfig cfg;
    cfg.network = network_from_json(j.at("network"));
    cfg.lr = j.at("lr").get<double>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.tau = j.at("tau").get<double>();
    cfg.estimator = estimator_from_string(j.at("estimator").get<std::string>());
    cfg.assignment = assignment_from_string(j.at("assignment").get<std::string>());
    cfg.objective = objective_from_string(j.value("objective", "infoseg"));
    cfg.max_steps = j.at("max_steps").get<std::int64_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.checkpoint_every = j.at("checkpoint_every").get<std::int64_t>();
    cfg.iic_jitter = j.value("iic_jitter", 0.2);
    cfg.iic_max_shift_cells = j.value("iic_max_shift_cells", 1);
    return cfg;
}

void write_vec(std::ofstream& out, const VecX<float>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(sizeof(float)) * v.size());
}

VecX<float> read_vec(std::ifstream& in, Eigen::Index n) {
    VecX<float> v(n);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(sizeof(float)) * n);
    if (!in) throw DataError("checkpoint: truncated tensor data");
    return v;
}

}  // namespace

std::string to_string(EstimatorKind k) { return k == EstimatorKind::kJsd ? "jsd" : "dv"; }
std::string to_string(AssignmentMode m) { return m == AssignmentMode::kSoft ? "soft" : "hard"; }
std::string to_string(Objective o) { return o == Objective::kInfoSeg ? "infoseg" : "iicmi"; }

EstimatorKind estimator_from_string(const std::string& s) {
    if (s == "jsd") return EstimatorKind::kJsd;
    if (s == "dv") return EstimatorKind::kDv;
    throw ConfigError("unknown estimator: " + s);
}

AssignmentMode assignment_from_string(const std::string& s) {
    if (s == "soft") return AssignmentMode::kSoft;
    if (s == "hard") return AssignmentMode::kHard;
    throw ConfigError("unknown assignment mode: " + s);
}

Objective objective_from_string(const std::string& s) {
    if (s == "infoseg") return Objective::kInfoSeg;
    if (s == "iicmi") return Objective::kIicMi;
    throw ConfigError("unknown objective: " + s);
}

std::string train_config_to_json(const TrainConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed train config JSON: ") + e.what());
    }
    return config_from_json_obj(j);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json header{{"config", config_to_json_obj(ckpt.config)},
                {"step", ckpt.step},
                {"rng", {{"base_seed", ckpt.config.seed}, {"next_step", ckpt.step}}},
                {"param_count", ckpt.params.size()}};
    std::string htext = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    std::uint64_t hlen = htext.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(htext.data(), std::streamsize(htext.size()));
    write_vec(out, ckpt.params);
    write_vec(out, ckpt.adam_m);
    write_vec(out, ckpt.adam_v);
    out.flush();
    if (!out) throw DataError("checkpoint: write failure: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path.string());
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htext(hlen, '\0');
    in.read(htext.data(), std::streamsize(hlen));
    if (!in) throw DataError("checkpoint: truncated header");
    json header = json::parse(htext);

    Checkpoint ckpt;
    ckpt.config = config_from_json_obj(header.at("config"));
    ckpt.step = header.at("step").get<std::int64_t>();
    Eigen::Index n = header.at("param_count").get<Eigen::Index>();
    ckpt.params = read_vec(in, n);
    ckpt.adam_m = read_vec(in, n);
    ckpt.adam_v = read_vec(in, n);
    return ckpt;
}

}  // namespace infoseg
