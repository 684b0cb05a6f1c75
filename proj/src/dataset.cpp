// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/dataset.hpp"

#include "featsplat/image_io.hpp"
#include "featsplat/rasterizer.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace featsplat {

using nlohmann::json;

std::vector<std::size_t> Dataset::train_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < views.size(); ++i)
        if (!views[i].is_test) idx.push_back(i);
    return idx;
}

std::vector<std::size_t> Dataset::test_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < views.size(); ++i)
        if (views[i].is_test) idx.push_back(i);
    return idx;
}

namespace {

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw LoadError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw LoadError(where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& root, bool with_images) {
    const auto manifest_path = root / "cameras.json";
    std::ifstream in(manifest_path);
    if (!in) throw LoadError("missing manifest " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw LoadError("malformed " + manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    ds.class_count = manifest.contains("class_count") ? field<int>(manifest, "class_count", "cameras.json") : 0;
    if (ds.class_count < 0 || ds.class_count > 255) throw LoadError("cameras.json: class_count must be in [0, 255]");
    if (!manifest.contains("views") || !manifest["views"].is_array())
        throw LoadError("cameras.json: 'views' array missing");

    for (const auto& entry : manifest["views"]) {
        View v;
        v.name = field<std::string>(entry, "file", "cameras.json view");
        const std::string where = "view '" + v.name + "'";
        const auto split = field<std::string>(entry, "split", where);
        if (split != "train" && split != "test") throw LoadError(where + ": split must be 'train' or 'test'");
        v.is_test = split == "test";

        Camera& cam = v.camera;
        cam.width = field<int>(entry, "w", where);
        cam.height = field<int>(entry, "h", where);
        cam.fx = field<double>(entry, "fx", where);
        cam.fy = field<double>(entry, "fy", where);
        cam.cx = field<double>(entry, "cx", where);
        cam.cy = field<double>(entry, "cy", where);
        const auto r = field<std::vector<double>>(entry, "R", where);
        const auto t = field<std::vector<double>>(entry, "t", where);
        if (r.size() != 9 || t.size() != 3) throw LoadError(where + ": R needs 9 values and t needs 3");
        for (int i = 0; i < 9; ++i) cam.rotation_w2c(i / 3, i % 3) = r[i];
        for (int i = 0; i < 3; ++i) cam.translation_w2c[i] = t[i];
        try {
            cam.validate();
        } catch (const InvalidInput& e) {
            throw LoadError(where + ": " + e.what());
        }

        if (!with_images) {
            ds.views.push_back(std::move(v));
            continue;
        }
        const auto image_path = root / v.name;
        if (!std::filesystem::exists(image_path)) throw LoadError(where + ": image file not found");
        v.image = read_png_rgb(image_path);
        if (v.image.width != cam.width || v.image.height != cam.height)
            throw LoadError(where + ": image is " + std::to_string(v.image.width) + "x" + std::to_string(v.image.height) +
                            " but camera says " + std::to_string(cam.width) + "x" + std::to_string(cam.height));

        if (entry.contains("label")) {
            if (ds.class_count == 0) throw LoadError(where + ": label map given but class_count is 0");
            const auto label_name = field<std::string>(entry, "label", where);
            const auto label_path = root / label_name;
            if (!std::filesystem::exists(label_path)) throw LoadError(where + ": label file not found");
            LabelMap labels = read_png_labels(label_path);
            if (labels.width != cam.width || labels.height != cam.height)
                throw LoadError(where + ": label map size does not match camera");
            for (const int id : labels.data)
                if (id != kIgnoreLabel && id >= ds.class_count)
                    throw LoadError(where + ": label id " + std::to_string(id) + " >= class_count " +
                                    std::to_string(ds.class_count));
            v.labels = std::move(labels);
        }
        ds.views.push_back(std::move(v));
    }

    const auto points_path = root / "points.xyz";
    if (std::filesystem::exists(points_path)) ds.seed_points = read_points_xyz(points_path);
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& root) {
    std::filesystem::create_directories(root / "images");
    json manifest;
    manifest["class_count"] = dataset.class_count;
    manifest["views"] = json::array();
    for (std::size_t i = 0; i < dataset.views.size(); ++i) {
        const View& v = dataset.views[i];
        char stem[32];
        std::snprintf(stem, sizeof stem, "%04zu", i);
        const std::string file = "images/" + std::string(stem) + ".png";
        write_png_rgb(root / file, v.image);
        json e;
        e["file"] = file;
        if (v.labels) {
            std::filesystem::create_directories(root / "labels");
            const std::string label = "labels/" + std::string(stem) + ".png";
            write_png_labels(root / label, *v.labels);
            e["label"] = label;
        }
        const Camera& c = v.camera;
        e["split"] = v.is_test ? "test" : "train";
        e["w"] = c.width;
        e["h"] = c.height;
        e["fx"] = c.fx;
        e["fy"] = c.fy;
        e["cx"] = c.cx;
        e["cy"] = c.cy;
        std::vector<double> r(9), t(3);
        for (int k = 0; k < 9; ++k) r[k] = c.rotation_w2c(k / 3, k % 3);
        for (int k = 0; k < 3; ++k) t[k] = c.translation_w2c[k];
        e["R"] = r;
        e["t"] = t;
        manifest["views"].push_back(std::move(e));
    }
    std::ofstream out(root / "cameras.json");
    out << manifest.dump(2) << '\n';

    if (!dataset.seed_points.empty()) {
        std::ofstream pts(root / "points.xyz");
        pts.precision(17);
        for (const auto& p : dataset.seed_points) pts << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    }
}

Split every_nth_split(std::size_t view_count, int n) {
    if (n < 2) throw InvalidInput("every_nth_split: n must be at least 2");
    Split s;
    for (std::size_t i = 0; i < view_count; ++i) (i % static_cast<std::size_t>(n) == 0 ? s.test : s.train).push_back(i);
    return s;
}

LabelMap render_labels(const SplatScene& scene, const std::vector<int>& gaussian_classes, int class_count,
                       const Camera& cam, double margin) {
    if (gaussian_classes.size() != scene.size()) throw InvalidInput("render_labels: one class per Gaussian required");
    if (class_count < 1) throw InvalidInput("render_labels: class count must be positive");
    SplatScene onehot = scene;
    onehot.feature_dim = class_count;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        const int c = gaussian_classes[i];
        if (c < 0 || c >= class_count) throw InvalidInput("render_labels: class id out of range");
        onehot.gaussians[i].feature = Eigen::VectorXd::Unit(class_count, c);
    }
    const RenderOutput r = blend_reference(onehot, cam);
    LabelMap labels(cam.width, cam.height);
    std::vector<double> w(class_count);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const auto f = r.feature_map.pixel(x, y);
            std::copy(f.begin(), f.end(), w.begin());
            w[class_count - 1] += r.transmittance_map.at(x, y);
            int best = 0;
            for (int c = 1; c < class_count; ++c)
                if (w[c] > w[best]) best = c;
            double second = -1.0;
            for (int c = 0; c < class_count; ++c)
                if (c != best) second = std::max(second, w[c]);
            labels.at(x, y) = (class_count > 1 && w[best] - second < margin) ? kIgnoreLabel : best;
        }
    return labels;
}

ToyDataset make_toy_dataset(const ToySpec& spec, std::uint64_t seed) {
    if (spec.n_views < 2) throw InvalidInput("make_toy_dataset: at least two views required");
    spec.scene.validate();
    spec.decoder.validate();
    if (spec.decoder.feature_dim != spec.scene.feature_dim)
        throw InvalidInput("make_toy_dataset: decoder feature dimension differs from the scene");
    const bool semantic = !spec.gaussian_classes.empty();

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    ToyDataset out;
    out.scene = spec.scene;
    out.decoder = spec.decoder;
    out.dataset.class_count = semantic ? spec.class_count : 0;

    const double step = 2.0 * std::numbers::pi / spec.n_views;
    auto make_view = [&](double azimuth, double elevation, bool is_test, std::size_t index) {
        const Eigen::Vector3d eye(spec.orbit_radius * std::cos(elevation) * std::cos(azimuth),
                                  spec.orbit_radius * std::cos(elevation) * std::sin(azimuth),
                                  spec.orbit_radius * std::sin(elevation));
        View v;
        v.camera = look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitZ(), spec.width, spec.height, spec.focal,
                           spec.focal);
        v.is_test = is_test;
        char name[32];
        std::snprintf(name, sizeof name, "images/%04zu.png", index);
        v.name = name;
        const RenderOutput r = blend_reference(spec.scene, v.camera);
        v.image = decode_image(r, v.camera, spec.decoder, spec.background).rgb;
        if (spec.brightness_amplitude != 0.0) {
            const double gain = 1.0 + spec.brightness_amplitude * std::cos(azimuth);
            for (auto& px : v.image.data) px = std::clamp(px * gain, 0.0, 1.0);
        }
        if (semantic)
            v.labels = render_labels(spec.scene, spec.gaussian_classes, spec.class_count, v.camera, spec.label_margin);
        out.dataset.views.push_back(std::move(v));
    };

    for (int k = 0; k < spec.n_views; ++k) {
        const double az = step * k + 0.15 * step * jitter(rng);
        const double el = spec.elevation + 0.05 * jitter(rng);
        make_view(az, el, false, out.dataset.views.size());
    }
    for (int k = 0; k < spec.n_test_views; ++k)
        make_view(step * (k + 0.5), spec.elevation, true, out.dataset.views.size());

    for (const auto& g : spec.scene.gaussians)
        out.dataset.seed_points.push_back(g.position + 0.05 * Eigen::Vector3d(normal(rng), normal(rng), normal(rng)));
    return out;
}

namespace {

Gaussian3D random_gaussian(std::mt19937_64& rng, const Eigen::Vector3d& center, double base_scale, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Gaussian3D g;
    g.position = center;
    g.rotation = Eigen::Vector4d(normal(rng), normal(rng), normal(rng), normal(rng)).normalized();
    for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(base_scale * (0.6 + 0.8 * uni(rng)));
    g.opacity_logit = logit(0.85 + 0.1 * uni(rng));
    g.feature.resize(dim);
    for (int d = 0; d < dim; ++d) g.feature[d] = normal(rng);
    return g;
}

Decoder vivid_decoder(std::mt19937_64& rng, int dim, int classes) {
    Decoder dec = make_decoder(dim, classes, EmbeddingConfig::none(), rng);
    dec.w1 *= 2.0;
    dec.w2 *= 4.0;
    return dec;
}

}  // namespace

ToySpec three_gaussian_toy(std::uint64_t seed, int feature_dim) {
    std::mt19937_64 rng(seed);
    ToySpec spec;
    spec.scene.feature_dim = feature_dim;
    const Eigen::Vector3d centers[3] = {{-0.45, -0.2, 0.0}, {0.35, 0.35, 0.1}, {0.1, -0.1, 0.45}};
    for (const auto& c : centers) spec.scene.gaussians.push_back(random_gaussian(rng, c, 0.3, feature_dim));
    spec.decoder = vivid_decoder(rng, feature_dim, 0);
    return spec;
}

ToySpec semantic_toy(std::uint64_t seed, int feature_dim) {
    std::mt19937_64 rng(seed);
    ToySpec spec;
    spec.scene.feature_dim = feature_dim;
    const Eigen::Vector3d centers[3] = {{-0.5, -0.2, 0.0}, {0.4, 0.3, 0.05}, {0.0, 0.0, 0.5}};
    for (const auto& c : centers) spec.scene.gaussians.push_back(random_gaussian(rng, c, 0.3, feature_dim));
    spec.gaussian_classes = {0, 1, 0};
    spec.class_count = 2;
    spec.label_margin = 0.3;
    spec.decoder = vivid_decoder(rng, feature_dim, 0);
    return spec;
}

}  // namespace featsplat
