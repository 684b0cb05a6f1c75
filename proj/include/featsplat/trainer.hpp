// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/dataset.hpp"
#include "featsplat/decoder.hpp"
#include "featsplat/losses.hpp"
#include "featsplat/optim.hpp"
#include "featsplat/rasterizer.hpp"
#include "featsplat/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <random>
#include <vector>

namespace featsplat {

struct TrainConfig {
    int iterations = 30000;

    double lr_mlp = 0.001;
    double lr_feature = 0.0025;
    double lr_position = 1.6e-4;       // scaled by the scene extent
    double lr_position_final = 1.6e-6; // reached log-linearly at the last iteration
    double lr_rotation = 1e-3;
    double lr_scale = 5e-3;
    double lr_opacity = 5e-2;
    double adam_eps = 1e-15;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;

    bool densify = true;
    int densify_interval = 100;
    int densify_from = 500;
    int densify_until = 15000;
    double densify_grad_threshold = 2e-4;
    double percent_dense = 0.01;
    double prune_opacity_threshold = 0.005;
    int opacity_reset_interval = 3000;

    LossConfig loss;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int feature_dim = 16;
    EmbeddingConfig embeddings;
    std::uint64_t seed = 0;
    int threads = 1;
    int random_init_points = 1000;  // used when the dataset has no seed points

    int probe_interval = 1;       // held-out PSNR is recomputed every N iterations
    int checkpoint_interval = 0;  // 0 = only the final checkpoint
    std::filesystem::path checkpoint_dir;

    void validate() const;
};

/// Optimizer moments for every per-Gaussian parameter group, kept row-aligned
/// with the scene through densification and pruning.
struct GaussianAdam {
    AdamState position{0}, rotation{0}, log_scale{0}, opacity{0}, feature{0};
    std::int64_t step = 0;

    static GaussianAdam for_scene(const SplatScene& scene);
    std::size_t rows() const { return opacity.m.size(); }
};

struct DecoderAdam {
    AdamState w1{0}, b1{0}, w2{0}, b2{0};

    static DecoderAdam for_decoder(const Decoder& dec);
};

struct TrainState {
    SplatScene scene;
    Decoder decoder;
    GaussianAdam gaussian_adam;
    DecoderAdam decoder_adam;
    std::vector<double> grad_accum;  // summed view-space positional gradient norms
    std::vector<int> grad_count;
    double scene_extent = 1.0;
    int iteration = 0;
    std::mt19937_64 rng;

    /// Builds scene, decoder and optimizer state for a dataset.
    static TrainState initialize(const Dataset& dataset, const TrainConfig& cfg);
};

struct IterationResult {
    double loss = 0.0;
    LossResult parts;
    std::size_t visible = 0;
};

/// One forward/backward/Adam step on a single view. Throws NonFiniteError
/// naming the first non-finite tensor.
IterationResult train_iteration(TrainState& state, const View& view, const TrainConfig& cfg);

/// Clones or splits Gaussians whose mean positional gradient exceeds the
/// threshold, removes nearly transparent ones, and keeps optimizer moments aligned.
void densify_and_prune(TrainState& state, const TrainConfig& cfg);

/// Caps every opacity at 0.01 and clears the opacity moments.
void reset_opacity(TrainState& state);

struct LogEntry {
    int iteration = 0;
    double loss = 0.0;
    double psnr = 0.0;
    std::size_t n_gaussians = 0;
};

struct TrainResult {
    SplatScene scene;
    Decoder decoder;
    std::vector<LogEntry> log;
};

/// Full training loop. When `log_stream` is set, writes one tab-separated
/// "iter loss psnr n_gaussians" line per iteration.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, std::ostream* log_stream = nullptr);

/// Radius of the training cameras around their centroid, times 1.1.
double camera_extent(const Dataset& dataset);

/// Renders and decodes one camera.
DecodedImage render_view(const SplatScene& scene, const Decoder& dec, const Camera& cam,
                         const Eigen::Vector3d& background, const EmbeddingOverrides& overrides = {},
                         int threads = 1);

struct ViewMetrics {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> miou;
    double seconds = 0.0;
};

struct EvalReport {
    std::vector<ViewMetrics> views;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    std::optional<double> mean_miou;
    double fps = 0.0;  // 1 / median render time, warm-up render excluded
};

/// Renders every test view (every view when none is tagged test) and scores it.
EvalReport evaluate(const SplatScene& scene, const Decoder& dec, const Dataset& dataset,
                    const Eigen::Vector3d& background, int threads = 1);

}  // namespace featsplat
