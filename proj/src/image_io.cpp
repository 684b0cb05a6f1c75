// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

namespace featsplat {

namespace {

struct PngImage {
    png_image img{};
    PngImage() {
        img.version = PNG_IMAGE_VERSION;
    }
    ~PngImage() { png_image_free(&img); }
    PngImage(const PngImage&) = delete;
    PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> read_pixels(const std::filesystem::path& path, std::uint32_t format, int& w, int& h) {
    PngImage png;
    if (!png_image_begin_read_from_file(&png.img, path.c_str()))
        throw LoadError("cannot read PNG " + path.string() + ": " + png.img.message);
    png.img.format = format;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png.img));
    if (!png_image_finish_read(&png.img, nullptr, buf.data(), 0, nullptr))
        throw LoadError("cannot decode PNG " + path.string() + ": " + png.img.message);
    w = static_cast<int>(png.img.width);
    h = static_cast<int>(png.img.height);
    return buf;
}

std::vector<std::uint8_t> write_memory(std::uint32_t format, int w, int h, const std::vector<std::uint8_t>& px) {
    PngImage png;
    png.img.width = static_cast<png_uint_32>(w);
    png.img.height = static_cast<png_uint_32>(h);
    png.img.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png.img, nullptr, &size, 0, px.data(), 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + png.img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png.img, out.data(), &size, 0, px.data(), 0, nullptr))
        throw std::runtime_error(std::string("PNG encode failed: ") + png.img.message);
    out.resize(size);
    return out;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ImageBuffer read_png_rgb(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto px = read_pixels(path, PNG_FORMAT_RGB, w, h);
    ImageBuffer img(w, h, 3);
    for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = px[i] / 255.0;
    return img;
}

LabelMap read_png_labels(const std::filesystem::path& path) {
    int w = 0, h = 0;
    const auto px = read_pixels(path, PNG_FORMAT_GRAY, w, h);
    LabelMap labels(w, h);
    for (std::size_t i = 0; i < px.size(); ++i) labels.data[i] = px[i];
    return labels;
}

std::vector<std::uint8_t> encode_png_rgb(const ImageBuffer& img) {
    if (img.channels != 3) throw InvalidInput("encode_png_rgb expects 3 channels");
    std::vector<std::uint8_t> px(img.data.size());
    std::transform(img.data.begin(), img.data.end(), px.begin(), to_byte);
    return write_memory(PNG_FORMAT_RGB, img.width, img.height, px);
}

std::vector<std::uint8_t> encode_png_labels(const LabelMap& labels) {
    std::vector<std::uint8_t> px(labels.data.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (labels.data[i] < 0 || labels.data[i] > 255) throw InvalidInput("label id does not fit in 8 bits");
        px[i] = static_cast<std::uint8_t>(labels.data[i]);
    }
    return write_memory(PNG_FORMAT_GRAY, labels.width, labels.height, px);
}

std::vector<std::uint8_t> encode_png_palette(const LabelMap& labels) {
    std::vector<std::uint8_t> px(labels.data.size() * 3);
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const std::uint8_t* c = label_color(labels.data[i]);
        std::copy(c, c + 3, px.begin() + static_cast<std::ptrdiff_t>(i * 3));
    }
    return write_memory(PNG_FORMAT_RGB, labels.width, labels.height, px);
}

void write_png_rgb(const std::filesystem::path& path, const ImageBuffer& img) { write_file(path, encode_png_rgb(img)); }

void write_png_labels(const std::filesystem::path& path, const LabelMap& labels) {
    write_file(path, encode_png_labels(labels));
}

ImageBuffer decode_png_rgb(const std::vector<std::uint8_t>& bytes) {
    PngImage png;
    if (!png_image_begin_read_from_memory(&png.img, bytes.data(), bytes.size()))
        throw LoadError(std::string("cannot read PNG from memory: ") + png.img.message);
    png.img.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(png.img));
    if (!png_image_finish_read(&png.img, nullptr, px.data(), 0, nullptr))
        throw LoadError(std::string("cannot decode PNG: ") + png.img.message);
    ImageBuffer img(static_cast<int>(png.img.width), static_cast<int>(png.img.height), 3);
    for (std::size_t i = 0; i < px.size(); ++i) img.data[i] = px[i] / 255.0;
    return img;
}

const std::uint8_t* label_color(int id) {
    // 4x4x4 RGB lattice, permuted so neighbouring ids get dissimilar colours
    static const std::array<std::array<std::uint8_t, 3>, 64> table = [] {
        std::array<std::array<std::uint8_t, 3>, 64> t{};
        const std::uint8_t levels[4] = {0, 85, 170, 255};
        for (int i = 0; i < 64; ++i) {
            const int k = (i * 37 + 11) % 64;
            t[i] = {levels[k & 3], levels[(k >> 2) & 3], levels[(k >> 4) & 3]};
        }
        return t;
    }();
    const int idx = ((id % 64) + 64) % 64;
    return table[idx].data();
}

}  // namespace featsplat
