#pragma once

#include "infoseg/checkpoint.hpp"
#include "infoseg/datasets.hpp"
#include "infoseg/mi.hpp"
#include "infoseg/network.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace infoseg {

struct AdamState {
    VecX<float> m;
    VecX<float> v;
    std::int64_t t = 0;

    static AdamState zeros(Eigen::Index n) {
        return AdamState{VecX<float>::Zero(n), VecX<float>::Zero(n), 0};
    }
};

/// Extended per-step record; entropy fields are filled by the IIC-MI
/// objective only.
struct StepReport {
    MiLossReport loss;
    double entropy_y = 0.0;
    bool has_entropy = false;
};

/// One alternating iteration: Segmentation Step (forward, scores,
/// softmax, argmax) followed by the MI Maximization Step (assignment,
/// estimator, backprop) and one Adam update. The probability volume the
/// MI step consumes comes from this step's forward pass.
StepReport train_step(const std::vector<Image<float>>& batch, const Network<float>& net,
                      VecX<float>& params, AdamState& adam, const TrainConfig& config,
                      std::int64_t step_index);

struct FitResult {
    std::filesystem::path final_checkpoint;
    std::vector<double> loss_trace;
};

/// Runs max_steps train_steps over seeded epoch permutations of the
/// train split, periodically checkpointing to run_dir/step-{n}.ckpt and
/// appending one JSON line per step to run_dir/metrics.jsonl.
/// Annotations are never read on this path.
FitResult fit(const std::vector<LoadedImage>& train_images, const TrainConfig& config,
              const std::filesystem::path& run_dir,
              const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace infoseg
