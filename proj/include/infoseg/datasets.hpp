#pragma once

#include "infoseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace infoseg {

enum class Split { kTrain, kEval };

struct DatasetMeta {
    int num_classes = 0;  // K'
    std::vector<std::string> class_names;
    int ignore_value = kIgnoreLabel;
    int channels = 3;
};

DatasetMeta read_meta(const std::filesystem::path& root);
void write_meta(const std::filesystem::path& root, const DatasetMeta& meta);

/// Per-channel standardization statistics, computed once over the train
/// split and cached at root/stats.json.
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

/// Label-free record; everything the training loop is allowed to see.
struct LoadedImage {
    Image<float> image;
    std::string id;
};

/// Channel count from meta.json, spatial size from the first image on
/// disk; the convenient entry point for tools that get only a root path.
ImageSpec infer_image_spec(const std::filesystem::path& root);

/// Ids in a split, deterministically ordered. Splits come from
/// root/splits.json; without it every image belongs to both splits.
std::vector<std::string> split_ids(const std::filesystem::path& root, Split split);

/// Full annotated load for evaluation: normalized to [0,1], standardized
/// with the cached dataset statistics, labels validated against meta.
std::vector<AnnotatedImage> load_dataset(const std::filesystem::path& root,
                                         const ImageSpec& spec, Split split);

/// The loading path used by training: label files are never opened.
std::vector<LoadedImage> load_images(const std::filesystem::path& root, const ImageSpec& spec,
                                     Split split);

ChannelStats load_or_compute_stats(const std::filesystem::path& root, const ImageSpec& spec);

/// One epoch of batches as a seeded permutation of the input. Training
/// mode drops the short final batch and requires batch_size >= 2.
std::vector<ImageBatch> make_batches(const std::vector<LoadedImage>& data, int batch_size,
                                     std::uint64_t shuffle_seed, Split mode);

/// Fixed-point-free permutation pairing each image with a distinct
/// partner for the marginal term.
std::vector<int> pair_marginals(int batch_size, std::uint64_t seed);

/// Content hash over meta, ids, and file bytes; stable across runs.
std::string dataset_fingerprint(const std::filesystem::path& root);

/// splitmix64; used to derive per-step and per-epoch seeds.
std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace infoseg
