#pragma once

#include "infoseg/types.hpp"

#include <random>
#include <utility>
#include <vector>

namespace infoseg {

/// Photometric + geometric view transform for the IIC-MI objective.
/// Shifts are in grid cells (multiples of the downsampling rate) so the
/// two prediction grids stay alignable.
struct ViewTransform {
    bool hflip = false;
    int shift_cells_y = 0;
    int shift_cells_x = 0;
    std::vector<float> channel_scale;
    std::vector<float> channel_offset;
};

inline ViewTransform sample_view_transform(std::mt19937_64& rng, int channels,
                                           double jitter = 0.2, int max_shift_cells = 1) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int> shift(-max_shift_cells, max_shift_cells);
    ViewTransform t;
    t.hflip = uni(rng) < 0.5;
    t.shift_cells_y = shift(rng);
    t.shift_cells_x = shift(rng);
    t.channel_scale.resize(channels);
    t.channel_offset.resize(channels);
    for (int c = 0; c < channels; ++c) {
        t.channel_scale[c] = float(1.0 + jitter * (2.0 * uni(rng) - 1.0));
        t.channel_offset[c] = float(0.5 * jitter * (2.0 * uni(rng) - 1.0));
    }
    return t;
}

/// out(y, x) = flip(shift(jitter(in))), shift clamped at the borders.
template <class Scalar>
Image<Scalar> apply_view(const Image<Scalar>& in, const ViewTransform& t, int downsampling) {
    Image<Scalar> out;
    out.height = in.height;
    out.width = in.width;
    out.values.resize(in.values.rows(), in.values.cols());
    const int sy = t.shift_cells_y * downsampling;
    const int sx = t.shift_cells_x * downsampling;
    for (int y = 0; y < in.height; ++y)
        for (int x = 0; x < in.width; ++x) {
            int xr = t.hflip ? in.width - 1 - x : x;
            int ys = std::clamp(y - sy, 0, in.height - 1);
            int xs = std::clamp(xr - sx, 0, in.width - 1);
            for (int c = 0; c < in.channels(); ++c)
                out.at(y, x, c) =
                    Scalar(t.channel_scale[c]) * in.at(ys, xs, c) + Scalar(t.channel_offset[c]);
        }
    return out;
}

/// Row-index pairs (original cell, transformed cell) that show the same
/// image content under the transform; border cells that fell off the
/// shifted view are excluded.
inline std::vector<std::pair<int, int>> paired_cell_indices(int u, int v,
                                                            const ViewTransform& t) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(size_t(u) * v);
    for (int i = 0; i < u; ++i)
        for (int j = 0; j < v; ++j) {
            int i2 = i + t.shift_cells_y;
            int j2 = j + t.shift_cells_x;
            if (i2 < 0 || i2 >= u || j2 < 0 || j2 >= v) continue;
            if (t.hflip) j2 = v - 1 - j2;
            pairs.emplace_back(i * v + j, i2 * v + j2);
        }
    return pairs;
}

}  // namespace infoseg
