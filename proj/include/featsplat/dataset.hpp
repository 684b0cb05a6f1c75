// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/camera.hpp"
#include "featsplat/common.hpp"
#include "featsplat/decoder.hpp"
#include "featsplat/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace featsplat {

struct View {
    std::string name;  // image path relative to the dataset root
    Camera camera;
    ImageBuffer image;               // H x W x 3 in [0,1]
    std::optional<LabelMap> labels;  // class ids, kIgnoreLabel = unlabeled
    bool is_test = false;
};

struct Dataset {
    std::vector<View> views;
    int class_count = 0;  // when > 0, id class_count - 1 is the "unknown" class
    std::vector<Eigen::Vector3d> seed_points;  // optional initialization points

    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> test_indices() const;
};

/// Reads `cameras.json`, the images it lists, optional label maps and an
/// optional `points.xyz`. Throws LoadError naming the offending view.
/// With `with_images` false only cameras and splits are read.
Dataset load_dataset(const std::filesystem::path& root, bool with_images = true);

/// Writes a dataset in the layout load_dataset reads (8-bit PNGs).
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Index i goes to test when i % n == 0. Requires n >= 2.
Split every_nth_split(std::size_t view_count, int n = 8);

/// Ground truth for a synthetic dataset.
struct ToySpec {
    SplatScene scene;
    Decoder decoder;  // ground-truth decoder used to colour the renders
    int n_views = 8;
    int n_test_views = 1;
    int width = 64;
    int height = 64;
    double focal = 64.0;
    double orbit_radius = 4.0;
    double elevation = 0.35;  // radians
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    double brightness_amplitude = 0.0;  // per-view multiplier 1 + a cos(azimuth)
    std::vector<int> gaussian_classes;  // one class per Gaussian; empty = RGB only
    int class_count = 0;
    double label_margin = 0.0;  // pixels whose top-two class weights differ by less are ignored
};

struct ToyDataset {
    Dataset dataset;
    SplatScene scene;
    Decoder decoder;
};

/// Renders the ground truth with the brute-force rasterizer from cameras on a
/// seeded orbit around the origin. Train views come first, then test views at
/// azimuths halfway between train views.
ToyDataset make_toy_dataset(const ToySpec& spec, std::uint64_t seed);

/// Three coloured Gaussians near the origin, view-independent decoder.
ToySpec three_gaussian_toy(std::uint64_t seed, int feature_dim = 16);

/// Two Gaussians of class 0 and 1 (1 doubles as the unknown/background class).
ToySpec semantic_toy(std::uint64_t seed, int feature_dim = 16);

/// Per-pixel labels: argmax of blended one-hot class weights, residual
/// transmittance voting for class C-1, ambiguous pixels set to kIgnoreLabel.
LabelMap render_labels(const SplatScene& scene, const std::vector<int>& gaussian_classes, int class_count,
                       const Camera& cam, double margin);

}  // namespace featsplat
