// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/dataset.hpp"
#include "featsplat/scene_io.hpp"
#include "featsplat/trainer.hpp"

#include "../support/test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <sstream>

using namespace featsplat;
using namespace featsplat::testing;

namespace {

const ToyDataset& toy() {
    static const ToyDataset t = make_toy_dataset(three_gaussian_toy(0), 0);
    return t;
}

// Six Gaussians: the three-Gaussian toy plus a shifted copy.
const ToyDataset& six() {
    static const ToyDataset t = [] {
        ToySpec spec = three_gaussian_toy(0);
        const std::size_t n = spec.scene.size();
        for (std::size_t i = 0; i < n; ++i) {
            Gaussian3D g = spec.scene.gaussians[i];
            g.position += Eigen::Vector3d(0.0, 0.6, 0.3);
            spec.scene.gaussians.push_back(g);
        }
        return make_toy_dataset(spec, 0);
    }();
    return t;
}

TrainConfig quick(int iters) {
    TrainConfig cfg;
    cfg.iterations = iters;
    cfg.probe_interval = 50;
    return cfg;
}

void check_adam_shapes(const TrainState& st) {
    const std::size_t n = st.scene.size();
    const std::size_t d = static_cast<std::size_t>(st.scene.feature_dim);
    const auto& a = st.gaussian_adam;
    CHECK(a.position.m.size() == 3 * n);
    CHECK(a.rotation.v.size() == 4 * n);
    CHECK(a.log_scale.m.size() == 3 * n);
    CHECK(a.opacity.v.size() == n);
    CHECK(a.feature.m.size() == d * n);
    CHECK(st.grad_accum.size() == n);
    CHECK(st.grad_count.size() == n);
}

}  // namespace

TEST_CASE("training config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lr_feature = -1e-3;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = TrainConfig{};
    cfg.adam_eps = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("initial state follows the dataset") {
    const TrainState st = TrainState::initialize(toy().dataset, quick(1));
    CHECK(st.scene.size() == toy().dataset.seed_points.size());
    CHECK(st.scene.feature_dim == 16);
    CHECK(st.decoder.config == EmbeddingConfig{});
    CHECK(st.scene_extent == doctest::Approx(camera_extent(toy().dataset)));
    check_adam_shapes(st);
}

TEST_CASE("loss decreases over 200 iterations, median over five seeds") {
    int decreased = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ToyDataset t = make_toy_dataset(three_gaussian_toy(seed), seed);
        TrainConfig cfg = quick(200);
        cfg.seed = seed;
        const TrainResult r = train(t.dataset, cfg);
        auto window_mean = [&](std::size_t from) {
            double s = 0.0;
            for (std::size_t i = from; i < from + 20; ++i) s += r.log[i].loss;
            return s / 20.0;
        };
        decreased += window_mean(180) < window_mean(0) ? 1 : 0;
    }
    CHECK(decreased >= 3);
}

TEST_CASE("zero learning rates leave every parameter bitwise unchanged") {
    TrainConfig cfg = quick(1);
    cfg.lr_mlp = cfg.lr_feature = cfg.lr_rotation = cfg.lr_scale = cfg.lr_opacity = 0.0;
    cfg.lr_position = cfg.lr_position_final = 0.0;
    TrainState st = TrainState::initialize(toy().dataset, TrainConfig{});
    const auto before = encode_scene(st.scene, st.decoder);
    for (int i = 0; i < 5; ++i) train_iteration(st, toy().dataset.views[static_cast<std::size_t>(i)], cfg);
    CHECK(encode_scene(st.scene, st.decoder) == before);
}

TEST_CASE("end-to-end position gradient matches finite differences") {
    std::mt19937_64 rng(12);
    SplatScene scene = random_scene(rng, 10, 8, 1.0, -1.6, -0.9);
    PipelineCase pc;
    pc.camera = front_camera(16, 16, 16.0);
    pc.target = random_image(rng, 16, 16, 3);
    Decoder dec = make_decoder(8, 0, EmbeddingConfig{}, rng);
    const PipelineGradients g = pipeline_gradients(scene, dec, pc);
    auto loss = [&] { return pipeline_loss(scene, dec, pc); };
    double worst = 0.0;
    for (int k = 0; k < 3; ++k)
        worst = std::max(worst, relative_error(g.scene.params[3].position[k],
                                               central_difference(loss, &scene.gaussians[3].position[k], 1e-4)));
    CHECK(worst < 1e-4);
}

TEST_CASE("densify and prune with nothing to do leaves the scene unchanged") {
    TrainState st = TrainState::initialize(toy().dataset, TrainConfig{});
    for (auto& g : st.scene.gaussians) g.opacity_logit = logit(0.5);
    const auto before = encode_scene(st.scene, st.decoder);
    densify_and_prune(st, TrainConfig{});
    CHECK(encode_scene(st.scene, st.decoder) == before);
    check_adam_shapes(st);
}

TEST_CASE("densify clones small and splits large high-gradient Gaussians, prunes transparent ones") {
    TrainState st = TrainState::initialize(six().dataset, TrainConfig{});
    const std::size_t n = st.scene.size();
    REQUIRE(n >= 4);
    for (auto& g : st.scene.gaussians) g.opacity_logit = logit(0.5);
    st.scene.gaussians[0].log_scale.setConstant(std::log(1e-4 * st.scene_extent));  // small: clone
    st.scene.gaussians[1].log_scale.setConstant(std::log(0.1 * st.scene_extent));   // large: split
    st.scene.gaussians[2].opacity_logit = logit(0.001);                             // pruned
    st.grad_accum[0] = st.grad_accum[1] = 1.0;
    st.grad_count[0] = st.grad_count[1] = 1;
    const Gaussian3D large = st.scene.gaussians[1];
    densify_and_prune(st, TrainConfig{});
    // +1 clone, +2 split children -1 split parent, -1 pruned
    CHECK(st.scene.size() == n + 1);
    check_adam_shapes(st);
    int children = 0;
    for (const auto& g : st.scene.gaussians)
        if ((g.log_scale - (large.log_scale.array() - std::log(1.6)).matrix()).norm() < 1e-12) ++children;
    CHECK(children == 2);
    CHECK(std::none_of(st.scene.gaussians.begin(), st.scene.gaussians.end(),
                       [](const Gaussian3D& g) { return g.opacity() < 0.005; }));
    CHECK(std::all_of(st.grad_accum.begin(), st.grad_accum.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("pruning never empties the scene") {
    TrainState st = TrainState::initialize(toy().dataset, TrainConfig{});
    for (std::size_t i = 0; i < st.scene.size(); ++i) st.scene.gaussians[i].opacity_logit = -20.0 + 0.1 * static_cast<double>(i);
    densify_and_prune(st, TrainConfig{});
    REQUIRE(st.scene.size() == 1);
    check_adam_shapes(st);
}

TEST_CASE("opacity reset caps opacities and clears their moments") {
    TrainState st = TrainState::initialize(toy().dataset, TrainConfig{});
    train_iteration(st, toy().dataset.views[0], TrainConfig{});
    for (auto& g : st.scene.gaussians) g.opacity_logit = logit(0.7);
    st.scene.gaussians[0].opacity_logit = logit(0.001);
    reset_opacity(st);
    CHECK(st.scene.gaussians[0].opacity() == doctest::Approx(0.001));
    CHECK(st.scene.gaussians[1].opacity() == doctest::Approx(0.01));
    CHECK(std::all_of(st.gaussian_adam.opacity.m.begin(), st.gaussian_adam.opacity.m.end(),
                      [](double v) { return v == 0.0; }));
}

TEST_CASE("non-finite parameters raise an error naming the tensor") {
    TrainState st = TrainState::initialize(toy().dataset, TrainConfig{});
    st.scene.gaussians[2].feature[1] = std::nan("");
    try {
        train_iteration(st, toy().dataset.views[0], TrainConfig{});
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(std::string(e.what()).find("feature") != std::string::npos);
    }
}

TEST_CASE("train writes a log line per iteration and checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "featsplat_train_test";
    std::filesystem::remove_all(dir);
    TrainConfig cfg = quick(20);
    cfg.checkpoint_interval = 10;
    cfg.checkpoint_dir = dir;
    std::ostringstream log;
    const TrainResult r = train(toy().dataset, cfg, &log);
    CHECK(r.log.size() == 20);
    const std::string text = log.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 20);
    std::istringstream first(text);
    std::string line;
    std::getline(first, line);
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
    CHECK(line.rfind("1\t", 0) == 0);
    CHECK(std::filesystem::exists(dir / "checkpoint_000010.fspl"));
    CHECK(std::filesystem::exists(dir / "checkpoint_000020.fspl"));
    CHECK(load_scene(dir / "final.fspl").scene.size() == r.scene.size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate scores the ground-truth scene at the PSNR cap") {
    const EvalReport rep = evaluate(toy().scene, toy().decoder, toy().dataset, Eigen::Vector3d::Zero());
    REQUIRE(rep.views.size() == toy().dataset.test_indices().size());
    CHECK(rep.mean_psnr == 100.0);
    CHECK(rep.mean_ssim == doctest::Approx(1.0));
    CHECK_FALSE(rep.mean_miou.has_value());
    CHECK(rep.fps > 0.0);
}
