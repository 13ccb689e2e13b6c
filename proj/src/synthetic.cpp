#include "infoseg/synthetic.hpp"

#include "infoseg/datasets.hpp"
#include "infoseg/image_io.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <random>

namespace infoseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Texture pattern carried by a class: the discriminative high-level cue.
// Background (class 0) is solid; other classes get stripes or checkers
// of class-dependent orientation and period.
int pattern_bit(int class_id, int y, int x) {
    if (class_id == 0) return 0;
    int period = 2 + (class_id % 2);
    switch (class_id % 3) {
        case 0: return (y / period + x / period) % 2;  // checker
        case 1: return (x / period) % 2;               // vertical stripes
        default: return (y / period) % 2;              // horizontal stripes
    }
}

// Two colors per (class, pool, channel), procedural but deterministic.
// Pools of the same class share the texture pattern and differ in color,
// so color alone never identifies a class.
float pool_color(const SyntheticSceneConfig& cfg, int class_id, int pool, int bit, int channel) {
    std::mt19937_64 rng(hash_seed(cfg.seed,
                                  0xC0109000ULL + (((std::uint64_t(class_id) * 64 + pool) * 2 + bit) *
                                                       8 +
                                                   channel)));
    std::uniform_real_distribution<double> uni(0.15, 0.85);
    return float(uni(rng));
}

}  // namespace

std::vector<ShapeSpec> scene_shapes(const SyntheticSceneConfig& config, int index) {
    std::mt19937_64 rng(hash_seed(config.seed, 0x51A9E5ULL + std::uint64_t(index)));
    std::uniform_int_distribution<int> count(config.shapes_min, config.shapes_max);
    std::uniform_int_distribution<int> ypos(0, config.height - 1);
    std::uniform_int_distribution<int> xpos(0, config.width - 1);
    int rmin = std::max(config.height / 6, 3);
    int rmax = std::max(config.height / 3, rmin + 1);
    std::uniform_int_distribution<int> radius(rmin, rmax);
    std::uniform_int_distribution<int> kind(0, 1);

    std::vector<ShapeSpec> shapes;
    const int n = count(rng);
    for (int s = 0; s < n; ++s) {
        ShapeSpec shape;
        shape.kind = kind(rng) ? ShapeSpec::kRectangle : ShapeSpec::kCircle;
        // Cycle classes so every foreground class appears with similar
        // frequency across the dataset.
        shape.class_id = config.num_classes <= 1 ? 0 : 1 + (index + s) % (config.num_classes - 1);
        shape.cy = ypos(rng);
        shape.cx = xpos(rng);
        shape.ry = radius(rng);
        shape.rx = radius(rng);
        shapes.push_back(shape);
    }
    return shapes;
}

AnnotatedImage render_scene(const SyntheticSceneConfig& config, int index) {
    config.validate();
    auto shapes = scene_shapes(config, index);
    std::mt19937_64 rng(hash_seed(config.seed, 0xBEECEULL + std::uint64_t(index)));
    std::uniform_int_distribution<int> pool_pick(0, config.color_pools_per_class - 1);
    std::uniform_real_distribution<double> noise(-config.texture_jitter, config.texture_jitter);

    AnnotatedImage out;
    out.id = "synth-" + std::to_string(index);
    out.labels = MatXi::Zero(config.height, config.width);
    out.image.height = config.height;
    out.image.width = config.width;
    out.image.values.resize(Eigen::Index(config.height) * config.width, config.channels);

    int bg_pool = pool_pick(rng);
    std::vector<int> shape_pool(shapes.size());
    for (size_t s = 0; s < shapes.size(); ++s) shape_pool[s] = pool_pick(rng);

    for (int y = 0; y < config.height; ++y)
        for (int x = 0; x < config.width; ++x) {
            int class_id = 0;
            int pool = bg_pool;
            // Later shapes paint over earlier ones.
            for (size_t s = 0; s < shapes.size(); ++s)
                if (shapes[s].inside(y, x)) {
                    class_id = shapes[s].class_id;
                    pool = shape_pool[s];
                }
            out.labels(y, x) = class_id;
            int bit = pattern_bit(class_id, y, x);
            for (int c = 0; c < config.channels; ++c) {
                double v = pool_color(config, class_id, pool, bit, c) + noise(rng);
                out.image.at(y, x, c) = float(std::clamp(v, 0.0, 1.0));
            }
        }
    return out;
}

std::vector<AnnotatedImage> generate_synthetic(const SyntheticSceneConfig& config, int n) {
    if (n < 1) throw ConfigError("generate_synthetic: n must be >= 1");
    config.validate();
    std::vector<AnnotatedImage> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(render_scene(config, i));
    return out;
}

std::vector<double> class_pixel_frequencies(const std::vector<AnnotatedImage>& data,
                                            int num_classes) {
    std::vector<std::int64_t> counts(num_classes, 0);
    std::int64_t total = 0;
    for (const auto& img : data)
        for (int y = 0; y < img.labels.rows(); ++y)
            for (int x = 0; x < img.labels.cols(); ++x) {
                int v = img.labels(y, x);
                if (v == kIgnoreLabel) continue;
                counts.at(v)++;
                ++total;
            }
    std::vector<double> freq(num_classes);
    for (int k = 0; k < num_classes; ++k) freq[k] = double(counts[k]) / double(total);
    return freq;
}

void materialize_synthetic(const SyntheticSceneConfig& config, int n_train, int n_eval,
                           const fs::path& root, bool force) {
    if (n_train < 1 || n_eval < 0) throw ConfigError("materialize_synthetic: bad split sizes");
    if (fs::exists(root) && !fs::is_empty(root) && !force)
        throw DataError("output directory " + root.string() +
                        " is not empty (use force to overwrite)");
    fs::create_directories(root / "images");
    fs::create_directories(root / "labels");

    auto data = generate_synthetic(config, n_train + n_eval);
    std::vector<std::string> train_ids, eval_ids;
    for (int i = 0; i < n_train + n_eval; ++i) {
        const auto& img = data[i];
        write_image_u8(root / "images" / (img.id + ".png"), img.image);
        write_label_map(root / "labels" / (img.id + ".png"), img.labels);
        (i < n_train ? train_ids : eval_ids).push_back(img.id);
    }

    DatasetMeta meta;
    meta.num_classes = config.num_classes;
    meta.channels = config.channels;
    meta.ignore_value = kIgnoreLabel;
    for (int k = 0; k < config.num_classes; ++k)
        meta.class_names.push_back(k == 0 ? "background" : "shape-" + std::to_string(k));
    write_meta(root, meta);

    {
        json splits{{"train", train_ids}, {"eval", eval_ids}};
        std::ofstream out(root / "splits.json");
        out << splits.dump(2) << "\n";
    }
    {
        json freq{{"frequencies", class_pixel_frequencies(data, config.num_classes)},
                  {"n_train", n_train},
                  {"n_eval", n_eval},
                  {"seed", config.seed}};
        std::ofstream out(root / "frequencies.json");
        out << freq.dump(2) << "\n";
    }
}

}  // namespace infoseg
