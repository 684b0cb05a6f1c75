// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace featsplat {

/// Bad arguments supplied by a caller (empty inputs, disabled overrides, ...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// API misuse that indicates a programming error on the caller side.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed scene file. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Dataset or image loading failure.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A loss or tensor went NaN/Inf during optimization.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense H x W x C buffer of doubles, row-major with channels innermost.
/// Used for RGB images, feature maps, transmittance and probability maps.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    std::span<double> pixel(int x, int y) {
        return {data.data() + index(x, y), static_cast<std::size_t>(channels)};
    }
    std::span<const double> pixel(int x, int y) const {
        return {data.data() + index(x, y), static_cast<std::size_t>(channels)};
    }

    bool same_shape(const ImageBuffer& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

/// Per-pixel integer class ids, row-major.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<int> data;

    LabelMap() = default;
    LabelMap(int w, int h, int fill = 0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    int& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    int at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr int kIgnoreLabel = 255;

}  // namespace featsplat
