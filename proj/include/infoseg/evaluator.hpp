#pragma once

#include "infoseg/checkpoint.hpp"
#include "infoseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace infoseg {

/// Predicted-by-annotated count matrix; ignore pixels are counted
/// separately and excluded from every metric.
struct ConfusionMatrix {
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;  // K x K'
    std::int64_t ignore_count = 0;

    ConfusionMatrix() = default;
    ConfusionMatrix(int k_pred, int k_true)
        : counts(Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(k_pred,
                                                                                   k_true)) {}
    std::int64_t total() const { return counts.sum(); }
    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        counts += other.counts;
        ignore_count += other.ignore_count;
        return *this;
    }
};

void accumulate(ConfusionMatrix& cm, const MatXi& pred, const MatXi& truth,
                int ignore_value = kIgnoreLabel);

/// Injective predicted -> annotated assignment maximizing the matched
/// pixel count (Hungarian method on the padded count matrix).
struct ClassMapping {
    std::vector<int> assignment;  // index k -> annotated class
    double matched_pa = 0.0;
};

ClassMapping hungarian_match(const ConfusionMatrix& cm);

struct PerClassMetrics {
    int pred_idx = 0;
    int matched_label = 0;
    double iou = 0.0;
    bool iou_defined = true;
    double pixel_freq = 0.0;  // annotated frequency of the matched label
};

struct MetricsReport {
    double pa = 0.0;
    double miou = 0.0;
    std::vector<PerClassMetrics> per_class;
    double ignore_fraction = 0.0;
    std::vector<int> mapping;
};

MetricsReport metrics(const ConfusionMatrix& cm, const ClassMapping& mapping);

std::string metrics_to_json(const MetricsReport& report,
                            const std::vector<std::string>& class_names);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& cm);

/// Full evaluation pass over the evaluation split: one forward per
/// image, one global Hungarian mapping, metrics JSON, confusion CSV and
/// per-image segmentation exports under out_dir.
MetricsReport evaluate_run(const std::filesystem::path& checkpoint_path,
                           const std::filesystem::path& data_root,
                           const std::filesystem::path& out_dir, bool export_images = true);

}  // namespace infoseg
