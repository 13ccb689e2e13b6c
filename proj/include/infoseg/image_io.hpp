#pragma once

#include "infoseg/types.hpp"

#include <filesystem>

namespace infoseg {

/// Reads a PNG/TIF image into [0,1] floats, channel order R,G,B(,IR).
/// Throws DataError naming the file on a missing or corrupt read.
Image<float> read_image(const std::filesystem::path& path);

/// Writes [0,1] floats as an 8-bit PNG (1, 3, or 4 channels).
void write_image_u8(const std::filesystem::path& path, const Image<float>& img);

/// Single-channel integer label map, 8-bit PNG.
MatXi read_label_map(const std::filesystem::path& path);
void write_label_map(const std::filesystem::path& path, const MatXi& labels);

/// Label map rendered through a fixed color table, for qualitative
/// overlays. alpha blends the colors over the (3-channel) image.
void write_overlay(const std::filesystem::path& path, const Image<float>& img,
                   const MatXi& labels, float alpha = 0.5f);

}  // namespace infoseg
