// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/scene_io.hpp"

#include "featsplat/common.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace featsplat {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
    void bytes(const char* s, std::size_t n) { buf_.insert(buf_.end(), s, s + n); }

    template <typename Mat>
    void matrix_row_major(const Mat& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
    }

    std::vector<std::uint8_t>& buffer() { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint64_t offset() const { return pos_; }

    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n)
            throw FormatError(std::string("truncated scene file while reading ") + what, pos_);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return bytes_[pos_++];
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
        pos_ += 8;
        return v;
    }
    double f32(const char* what) { return static_cast<double>(std::bit_cast<float>(u32(what))); }

    template <typename Mat>
    void matrix_row_major(Mat& m, const char* what) {
        need(static_cast<std::size_t>(m.size()) * 4, what);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f32(what);
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in pieces
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
        crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
        pos += n;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> encode_scene(const SplatScene& scene, const Decoder& decoder) {
    scene.validate();
    decoder.validate();
    if (decoder.feature_dim != scene.feature_dim || decoder.class_count != scene.class_count)
        throw InvalidInput("decoder dimensions do not match the scene");

    Writer w;
    w.bytes("FSPL", 4);
    w.u32(kSceneFileVersion);
    w.u64(scene.size());
    w.u32(static_cast<std::uint32_t>(scene.feature_dim));
    w.u32(static_cast<std::uint32_t>(scene.class_count));
    for (const auto& g : scene.gaussians) {
        for (int i = 0; i < 3; ++i) w.f32(g.position[i]);
        for (int i = 0; i < 4; ++i) w.f32(g.rotation[i]);
        for (int i = 0; i < 3; ++i) w.f32(g.log_scale[i]);
        w.f32(g.opacity_logit);
        for (Eigen::Index i = 0; i < g.feature.size(); ++i) w.f32(g.feature[i]);
    }
    w.u32(static_cast<std::uint32_t>(decoder.config.dim()));
    w.u8(decoder.config.flags());
    w.u32(static_cast<std::uint32_t>(decoder.class_count));
    w.matrix_row_major(decoder.w1);
    w.matrix_row_major(decoder.b1);
    w.matrix_row_major(decoder.w2);
    w.matrix_row_major(decoder.b2);
    w.u32(crc32_of(w.buffer()));
    return std::move(w.buffer());
}

LoadedScene decode_scene(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "FSPL", 4) != 0) throw FormatError("bad magic, not a scene file", 0);
    r.u32("magic");
    const std::uint64_t version_at = r.offset();
    const std::uint32_t version = r.u32("version");
    if (version != kSceneFileVersion)
        throw FormatError("unsupported scene file version " + std::to_string(version), version_at);
    const std::uint64_t n = r.u64("gaussian count");
    const std::uint64_t dim_at = r.offset();
    const std::uint32_t dim = r.u32("feature dimension");
    const std::uint32_t classes = r.u32("class count");
    if (dim < 1 || dim > 4096) throw FormatError("implausible feature dimension " + std::to_string(dim), dim_at);
    if (classes > 65536) throw FormatError("implausible class count " + std::to_string(classes), dim_at + 4);

    const std::uint64_t record_bytes = 4ull * (11 + dim);
    if (n > (bytes.size() - r.offset()) / record_bytes) {
        const std::uint64_t complete = (bytes.size() - r.offset()) / record_bytes;
        throw FormatError("truncated scene file: gaussian record " + std::to_string(complete) + " of " +
                              std::to_string(n) + " is incomplete",
                          r.offset() + complete * record_bytes);
    }

    LoadedScene out;
    out.scene.feature_dim = static_cast<int>(dim);
    out.scene.class_count = static_cast<int>(classes);
    out.scene.gaussians.resize(n);
    for (auto& g : out.scene.gaussians) {
        for (int i = 0; i < 3; ++i) g.position[i] = r.f32("position");
        for (int i = 0; i < 4; ++i) g.rotation[i] = r.f32("rotation");
        for (int i = 0; i < 3; ++i) g.log_scale[i] = r.f32("log_scale");
        g.opacity_logit = r.f32("opacity");
        g.feature.resize(dim);
        for (std::uint32_t i = 0; i < dim; ++i) g.feature[i] = r.f32("feature");
    }

    const std::uint64_t emb_at = r.offset();
    const std::uint32_t emb_dim = r.u32("decoder embedding dimension");
    const std::uint64_t flags_at = r.offset();
    const std::uint8_t flags = r.u8("decoder flags");
    if (flags & ~0x7u) throw FormatError("unknown decoder flag bits", flags_at);
    const EmbeddingConfig config = EmbeddingConfig::from_flags(flags);
    if (static_cast<int>(emb_dim) != config.dim())
        throw FormatError("decoder embedding dimension disagrees with its flags", emb_at);
    const std::uint64_t dec_c_at = r.offset();
    const std::uint32_t dec_classes = r.u32("decoder class count");
    if (dec_classes != classes) throw FormatError("decoder class count disagrees with header", dec_c_at);

    out.decoder = Decoder::zeros(static_cast<int>(dim), static_cast<int>(classes), config);
    r.matrix_row_major(out.decoder.w1, "decoder W1");
    r.matrix_row_major(out.decoder.b1, "decoder b1");
    r.matrix_row_major(out.decoder.w2, "decoder W2");
    r.matrix_row_major(out.decoder.b2, "decoder b2");

    const std::uint64_t crc_at = r.offset();
    const std::uint32_t expected = crc32_of(bytes.first(crc_at));
    const std::uint32_t stored = r.u32("checksum");
    if (stored != expected) throw FormatError("checksum mismatch", crc_at);
    if (r.offset() != bytes.size()) throw FormatError("trailing bytes after checksum", r.offset());
    return out;
}

void save_scene(const SplatScene& scene, const Decoder& decoder, const std::filesystem::path& path) {
    const auto bytes = encode_scene(scene, decoder);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

LoadedScene load_scene(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open scene file " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_scene(bytes);
}

}  // namespace featsplat
