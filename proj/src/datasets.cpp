#include "infoseg/datasets.hpp"

#include "infoseg/image_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <random>

namespace infoseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

std::vector<std::string> list_ids(const fs::path& root) {
    fs::path dir = root / "images";
    if (!fs::is_directory(dir))
        throw DataError("dataset layout: missing directory " + dir.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".tif" || ext == ".tiff")
            ids.push_back(entry.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

fs::path image_path(const fs::path& root, const std::string& id) {
    for (const char* ext : {".png", ".tif", ".tiff"}) {
        fs::path p = root / "images" / (id + ext);
        if (fs::exists(p)) return p;
    }
    throw DataError("missing image file for id " + id + " under " + root.string());
}

Image<float> conform(Image<float> img, const ImageSpec& spec, const std::string& id) {
    if (img.channels() != spec.channels)
        throw DataError("image " + id + ": channel count " + std::to_string(img.channels()) +
                        " does not match spec " + std::to_string(spec.channels));
    if (img.height < spec.height || img.width < spec.width)
        throw DataError("image " + id + ": smaller than spec, cannot crop");
    if (img.height == spec.height && img.width == spec.width) return img;
    // Center crop to the configured size.
    int oy = (img.height - spec.height) / 2;
    int ox = (img.width - spec.width) / 2;
    Image<float> out;
    out.height = spec.height;
    out.width = spec.width;
    out.values.resize(Eigen::Index(spec.height) * spec.width, img.channels());
    for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
            out.values.row(Eigen::Index(y) * spec.width + x) =
                img.values.row(Eigen::Index(y + oy) * img.width + x + ox);
    return out;
}

MatXi crop_labels(const MatXi& labels, const ImageSpec& spec) {
    if (labels.rows() == spec.height && labels.cols() == spec.width) return labels;
    int oy = (int(labels.rows()) - spec.height) / 2;
    int ox = (int(labels.cols()) - spec.width) / 2;
    return labels.block(oy, ox, spec.height, spec.width);
}

void standardize(Image<float>& img, const ChannelStats& stats) {
    for (int c = 0; c < img.channels(); ++c)
        img.values.col(c) =
            (img.values.col(c).array() - float(stats.mean[c])) / float(stats.stddev[c]);
}

}  // namespace

std::uint64_t hash_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

DatasetMeta read_meta(const fs::path& root) {
    json j = read_json_file(root / "meta.json");
    DatasetMeta meta;
    meta.num_classes = j.at("num_classes").get<int>();
    meta.channels = j.at("channels").get<int>();
    meta.ignore_value = j.value("ignore_value", kIgnoreLabel);
    meta.class_names = j.value("class_names", std::vector<std::string>{});
    if (meta.num_classes < 1) throw DataError("meta.json: num_classes must be >= 1");
    return meta;
}

void write_meta(const fs::path& root, const DatasetMeta& meta) {
    json j{{"num_classes", meta.num_classes},
           {"channels", meta.channels},
           {"ignore_value", meta.ignore_value},
           {"class_names", meta.class_names}};
    std::ofstream out(root / "meta.json");
    out << j.dump(2) << "\n";
    if (!out) throw DataError("cannot write meta.json under " + root.string());
}

ImageSpec infer_image_spec(const fs::path& root) {
    DatasetMeta meta = read_meta(root);
    auto ids = list_ids(root);
    if (ids.empty()) throw DataError("dataset has no images under " + root.string());
    Image<float> first = read_image(image_path(root, ids.front()));
    ImageSpec spec;
    spec.height = first.height;
    spec.width = first.width;
    spec.channels = meta.channels;
    spec.validate();
    return spec;
}

std::vector<std::string> split_ids(const fs::path& root, Split split) {
    auto all = list_ids(root);
    fs::path splits = root / "splits.json";
    if (!fs::exists(splits)) return all;
    json j = read_json_file(splits);
    auto ids = j.at(split == Split::kTrain ? "train" : "eval").get<std::vector<std::string>>();
    std::sort(ids.begin(), ids.end());
    return ids;
}

ChannelStats load_or_compute_stats(const fs::path& root, const ImageSpec& spec) {
    fs::path cache = root / "stats.json";
    if (fs::exists(cache)) {
        json j = read_json_file(cache);
        ChannelStats stats;
        stats.mean = j.at("mean").get<std::vector<double>>();
        stats.stddev = j.at("stddev").get<std::vector<double>>();
        if (int(stats.mean.size()) != spec.channels)
            throw DataError("stats.json channel count mismatch in " + root.string());
        return stats;
    }
    // One pass over the train split in [0,1] space.
    auto ids = split_ids(root, Split::kTrain);
    if (ids.empty()) throw DataError("cannot compute stats: empty train split");
    std::vector<double> sum(spec.channels, 0.0), sumsq(spec.channels, 0.0);
    double count = 0.0;
    for (const auto& id : ids) {
        Image<float> img = conform(read_image(image_path(root, id)), spec, id);
        for (int c = 0; c < spec.channels; ++c) {
            sum[c] += img.values.col(c).cast<double>().sum();
            sumsq[c] += img.values.col(c).cast<double>().array().square().sum();
        }
        count += double(img.values.rows());
    }
    ChannelStats stats;
    stats.mean.resize(spec.channels);
    stats.stddev.resize(spec.channels);
    for (int c = 0; c < spec.channels; ++c) {
        stats.mean[c] = sum[c] / count;
        double var = sumsq[c] / count - stats.mean[c] * stats.mean[c];
        stats.stddev[c] = std::max(std::sqrt(std::max(var, 0.0)), 1e-6);
    }
    json j{{"mean", stats.mean}, {"stddev", stats.stddev}};
    std::ofstream out(cache);
    out << j.dump(2) << "\n";
    return stats;
}

std::vector<LoadedImage> load_images(const fs::path& root, const ImageSpec& spec, Split split) {
    spec.validate();
    DatasetMeta meta = read_meta(root);
    if (meta.channels != spec.channels)
        throw DataError("dataset channels " + std::to_string(meta.channels) +
                        " do not match spec " + std::to_string(spec.channels));
    ChannelStats stats = load_or_compute_stats(root, spec);
    std::vector<LoadedImage> out;
    for (const auto& id : split_ids(root, split)) {
        LoadedImage rec;
        rec.id = id;
        rec.image = conform(read_image(image_path(root, id)), spec, id);
        standardize(rec.image, stats);
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<AnnotatedImage> load_dataset(const fs::path& root, const ImageSpec& spec,
                                         Split split) {
    DatasetMeta meta = read_meta(root);
    auto images = load_images(root, spec, split);
    std::vector<AnnotatedImage> out;
    out.reserve(images.size());
    for (auto& rec : images) {
        AnnotatedImage ann;
        ann.id = rec.id;
        ann.image = std::move(rec.image);
        fs::path lpath = root / "labels" / (rec.id + ".png");
        ann.labels = crop_labels(read_label_map(lpath), spec);
        if (ann.labels.rows() != spec.height || ann.labels.cols() != spec.width)
            throw DataError("label map " + lpath.string() + ": shape mismatch");
        for (int y = 0; y < ann.labels.rows(); ++y)
            for (int x = 0; x < ann.labels.cols(); ++x) {
                int v = ann.labels(y, x);
                if (v != meta.ignore_value && v >= meta.num_classes)
                    throw DataError("label map " + lpath.string() + ": value " +
                                    std::to_string(v) + " >= num_classes");
            }
        out.push_back(std::move(ann));
    }
    return out;
}

std::vector<ImageBatch> make_batches(const std::vector<LoadedImage>& data, int batch_size,
                                     std::uint64_t shuffle_seed, Split mode) {
    if (mode == Split::kTrain && batch_size < 2)
        throw ConfigError("make_batches: training needs batch_size >= 2");
    if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
    std::vector<int> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    // Seeded Fisher-Yates, independent of std library shuffle details.
    std::mt19937_64 rng(shuffle_seed);
    for (size_t i = order.size(); i > 1; --i) {
        size_t j = rng() % i;
        std::swap(order[i - 1], order[j]);
    }
    std::vector<ImageBatch> batches;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        size_t end = std::min(start + batch_size, order.size());
        if (mode == Split::kTrain && end - start < size_t(batch_size)) break;
        ImageBatch batch;
        for (size_t i = start; i < end; ++i) {
            batch.images.push_back(data[order[i]].image);
            batch.ids.push_back(data[order[i]].id);
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<int> pair_marginals(int batch_size, std::uint64_t seed) {
    if (batch_size < 2) throw StructuralError("pair_marginals: need batch size >= 2");
    // Sattolo's algorithm: a uniformly random single-cycle permutation,
    // which is fixed-point-free by construction.
    std::vector<int> perm(batch_size);
    for (int i = 0; i < batch_size; ++i) perm[i] = i;
    std::mt19937_64 rng(seed);
    for (int i = batch_size - 1; i > 0; --i) {
        int j = int(rng() % std::uint64_t(i));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

std::string dataset_fingerprint(const fs::path& root) {
    // FNV-1a over meta, ids and file bytes.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const char* data, size_t n) {
        for (size_t i = 0; i < n; ++i) {
            h ^= std::uint8_t(data[i]);
            h *= 0x100000001b3ULL;
        }
    };
    auto mix_file = [&](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw DataError("fingerprint: cannot read " + p.string());
        char buf[8192];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            mix_bytes(buf, size_t(in.gcount()));
    };
    mix_file(root / "meta.json");
    for (const auto& id : list_ids(root)) {
        mix_bytes(id.data(), id.size());
        mix_file(image_path(root, id));
        fs::path lbl = root / "labels" / (id + ".png");
        if (fs::exists(lbl)) mix_file(lbl);
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return std::string(out);
}

}  // namespace infoseg
