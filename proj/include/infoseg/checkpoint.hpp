#pragma once

#include "infoseg/mi.hpp"
#include "infoseg/network.hpp"
#include "infoseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace infoseg {

enum class Objective { kInfoSeg, kIicMi };

struct TrainConfig {
    NetworkConfig network;
    double lr = 1e-4;
    int batch_size = 64;
    double tau = 0.8;
    EstimatorKind estimator = EstimatorKind::kJsd;
    AssignmentMode assignment = AssignmentMode::kSoft;
    Objective objective = Objective::kInfoSeg;
    std::int64_t max_steps = 0;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 1000;
    // IIC-MI view transform settings.
    double iic_jitter = 0.2;
    int iic_max_shift_cells = 1;

    void validate() const {
        network.validate();
        if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
        if (tau <= 0.0) throw ConfigError("TrainConfig: tau must be positive");
        if (lr < 0.0) throw ConfigError("TrainConfig: negative learning rate");
        if (max_steps < 0) throw ConfigError("TrainConfig: negative max_steps");
        if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every must be >= 1");
    }
};

std::string to_string(EstimatorKind k);
std::string to_string(AssignmentMode m);
std::string to_string(Objective o);
EstimatorKind estimator_from_string(const std::string& s);
AssignmentMode assignment_from_string(const std::string& s);
Objective objective_from_string(const std::string& s);

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);

/// Self-describing training snapshot: config, parameters, optimizer
/// moments, RNG derivation state, and the iteration counter.
struct Checkpoint {
    TrainConfig config;
    std::int64_t step = 0;
    VecX<float> params;
    VecX<float> adam_m;
    VecX<float> adam_v;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace infoseg
