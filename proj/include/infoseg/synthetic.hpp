#pragma once

#include "infoseg/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace infoseg {

/// Desk-scale scene generator: textured background plus randomly placed
/// textured shapes. Class identity is carried by the texture pattern
/// while each class draws its colors from >= 2 disjoint pools, so no
/// single color is class-homogeneous.
struct SyntheticSceneConfig {
    int num_classes = 3;  // including background class 0
    int shapes_min = 2;
    int shapes_max = 4;
    double texture_jitter = 0.03;
    int color_pools_per_class = 2;
    std::uint64_t seed = 0;
    int height = 32;
    int width = 32;
    int channels = 3;

    void validate() const {
        if (num_classes < 1) throw ConfigError("SyntheticSceneConfig: num_classes must be >= 1");
        if (shapes_min > shapes_max)
            throw ConfigError("SyntheticSceneConfig: empty shapes_per_image range");
        if (shapes_min < 0) throw ConfigError("SyntheticSceneConfig: negative shape count");
        if (color_pools_per_class < 2)
            throw ConfigError("SyntheticSceneConfig: need >= 2 color pools per class");
        if (height < 8 || width < 8 || channels < 1)
            throw ConfigError("SyntheticSceneConfig: invalid image dims");
    }
};

struct ShapeSpec {
    enum Kind { kCircle, kRectangle } kind;
    int class_id;   // in {1 .. num_classes-1}
    int cy, cx;     // center
    int ry, rx;     // radii / half extents
    bool inside(int y, int x) const {
        if (kind == kRectangle) return std::abs(y - cy) <= ry && std::abs(x - cx) <= rx;
        double dy = double(y - cy) / ry, dx = double(x - cx) / rx;
        return dy * dy + dx * dx <= 1.0;
    }
};

/// The shapes for image `index`, a pure function of (config, index).
std::vector<ShapeSpec> scene_shapes(const SyntheticSceneConfig& config, int index);

/// Renders image `index`; labels come from painting the shape list in
/// order over a background of class 0.
AnnotatedImage render_scene(const SyntheticSceneConfig& config, int index);

std::vector<AnnotatedImage> generate_synthetic(const SyntheticSceneConfig& config, int n);

/// Per-class pixel frequencies of a generated set, summing to 1.
std::vector<double> class_pixel_frequencies(const std::vector<AnnotatedImage>& data,
                                            int num_classes);

/// Writes the documented directory layout (images/, labels/, meta.json,
/// splits.json, frequencies.json). n_train + n_eval images total.
void materialize_synthetic(const SyntheticSceneConfig& config, int n_train, int n_eval,
                           const std::filesystem::path& root, bool force = false);

}  // namespace infoseg
