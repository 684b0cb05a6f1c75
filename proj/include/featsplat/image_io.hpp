// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/common.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace featsplat {

/// 8-bit PNG to linear [0,1] by /255 (no gamma transform).
ImageBuffer read_png_rgb(const std::filesystem::path& path);
/// Single-channel 8-bit PNG of class ids.
LabelMap read_png_labels(const std::filesystem::path& path);

/// Values are clamped to [0,1] and rounded to 8 bits.
std::vector<std::uint8_t> encode_png_rgb(const ImageBuffer& img);
std::vector<std::uint8_t> encode_png_labels(const LabelMap& labels);
std::vector<std::uint8_t> encode_png_palette(const LabelMap& labels);

void write_png_rgb(const std::filesystem::path& path, const ImageBuffer& img);
void write_png_labels(const std::filesystem::path& path, const LabelMap& labels);

ImageBuffer decode_png_rgb(const std::vector<std::uint8_t>& bytes);

/// Fixed 64-entry colour table used to visualize semantic labels; ids >= 64 wrap.
const std::uint8_t* label_color(int id);

}  // namespace featsplat
