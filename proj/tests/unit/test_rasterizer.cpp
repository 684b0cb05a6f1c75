// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/rasterizer.hpp"

#include "../support/test_support.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <algorithm>
#include <tuple>

using namespace featsplat;
using namespace featsplat::testing;

namespace {

Gaussian3D isotropic(const Eigen::Vector3d& pos, double scale, double opacity_logit, const Eigen::VectorXd& feature) {
    Gaussian3D g;
    g.position = pos;
    g.log_scale = Eigen::Vector3d::Constant(std::log(scale));
    g.opacity_logit = opacity_logit;
    g.feature = feature;
    return g;
}

Eigen::Vector2d pinhole(const Camera& c, const Eigen::Vector3d& world) {
    const Eigen::Vector3d p = c.to_camera(world);
    return {c.fx * p.x() / p.z() + c.cx, c.fy * p.y() / p.z() + c.cy};
}

// d pinhole / d world by central differences
Eigen::Matrix<double, 2, 3> numeric_jacobian(const Camera& c, const Eigen::Vector3d& x) {
    Eigen::Matrix<double, 2, 3> j;
    for (int k = 0; k < 3; ++k) {
        const double h = 1e-6;
        Eigen::Vector3d a = x, b = x;
        a[k] += h;
        b[k] -= h;
        j.col(k) = (pinhole(c, a) - pinhole(c, b)) / (2 * h);
    }
    return j;
}

Splat2D make_splat(Eigen::Vector2d mean, double var, double depth, std::size_t index, double alpha = 0.9) {
    Splat2D s;
    s.mean2d = mean;
    s.cov2d = Eigen::Matrix2d::Identity() * var;
    s.conic = (s.cov2d + Eigen::Matrix2d::Identity() * kLowPassDilation).inverse();
    s.depth = depth;
    s.alpha_max = alpha;
    s.source_index = index;
    return s;
}

}  // namespace

TEST_CASE("on-axis projection closed form") {
    Camera c = front_camera(64, 64, 100.0);
    const Gaussian3D g = isotropic({0, 0, 2}, 0.1, 0.0, Eigen::VectorXd::Zero(3));
    const auto s = project(g, c, 0.2);
    REQUIRE(s);
    CHECK(s->mean2d == Eigen::Vector2d(c.cx, c.cy));
    CHECK(s->depth == 2.0);
    const Eigen::Matrix<double, 2, 3> j = numeric_jacobian(c, g.position);
    const Eigen::Matrix2d oracle = j * covariance3d(g) * j.transpose();
    CHECK((s->cov2d - oracle).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((s->cov2d - 25.0 * Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::Matrix2d dilated = s->cov2d + kLowPassDilation * Eigen::Matrix2d::Identity();
    CHECK((s->conic * dilated - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(s->alpha_max == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("projected covariance matches J W Sigma W^T J^T with a numeric Jacobian") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        Camera c = front_camera(80, 60, uniform(rng, 40, 120));
        c.rotation_w2c = rotation_from_euler_xyz({uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -3, 3)});
        c.translation_w2c = {uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, 2, 4)};
        Gaussian3D g;
        g.position = {uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4)};
        g.rotation = random_quaternion(rng);
        g.log_scale = {uniform(rng, -3, -1), uniform(rng, -3, -1), uniform(rng, -3, -1)};
        g.feature = Eigen::VectorXd::Zero(3);
        const auto s = project(g, c, 0.2);
        REQUIRE(s);
        CHECK((s->mean2d - pinhole(c, g.position)).norm() < 1e-9);
        const Eigen::Matrix<double, 2, 3> j = numeric_jacobian(c, g.position);
        const Eigen::Matrix2d oracle = j * covariance3d(g) * j.transpose();
        CHECK((s->cov2d - oracle).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
        CHECK(s->cov2d(0, 1) == s->cov2d(1, 0));
    }
}

TEST_CASE("projection culls behind the near plane and off-screen splats") {
    const Camera c = front_camera(32, 32, 32.0);
    const Eigen::VectorXd f = Eigen::VectorXd::Zero(3);
    CHECK_FALSE(project(isotropic({0, 0, 0.1}, 0.05, 0.0, f), c, 0.2));
    CHECK_FALSE(project(isotropic({0, 0, -3}, 0.05, 0.0, f), c, 0.2));
    CHECK_FALSE(project(isotropic({20, 0, 2}, 0.05, 0.0, f), c, 0.2));
    CHECK(project(isotropic({0, 0, 0.3}, 0.05, 0.0, f), c, 0.2));
}

TEST_CASE("depth_key preserves order") {
    std::mt19937_64 rng(4);
    std::vector<double> d = {0.2, 0.2000000001, 1.0, 1e6, 3.5, 3.5};
    for (int i = 0; i < 1000; ++i) d.push_back(uniform(rng, 0.2, 100.0));
    for (double a : d)
        for (double b : {0.2, 1.0, 3.5, 50.0}) CHECK((a < b) == (depth_key(a) < depth_key(b)));
}

TEST_CASE("sort_splats orders by tile then depth") {
    const TileGrid grid = TileGrid::for_camera(front_camera(16, 16, 16.0), 16);
    std::vector<Splat2D> splats = {make_splat({8, 8}, 1.0, 3.0, 0), make_splat({8, 8}, 1.0, 1.0, 1),
                                   make_splat({8, 8}, 1.0, 2.0, 2)};
    const auto keys = sort_splats(splats, grid);
    REQUIRE(keys.size() == 3);
    CHECK(keys[0].splat == 1);
    CHECK(keys[1].splat == 2);
    CHECK(keys[2].splat == 0);
}

TEST_CASE("a splat straddling a tile corner emits four keys") {
    const TileGrid grid = TileGrid::for_camera(front_camera(64, 64, 64.0), 16);
    const std::vector<Splat2D> splats = {make_splat({16.0, 16.0}, 4.0, 2.0, 0)};
    const TileRect r = tile_range(splats[0], grid);
    CHECK(r.area() == 4);
    const auto keys = sort_splats(splats, grid);
    REQUIRE(keys.size() == 4);
    std::vector<std::uint32_t> tiles;
    for (const auto& k : keys) tiles.push_back(k.tile_id);
    CHECK(tiles == std::vector<std::uint32_t>{0, 1, 4, 5});
}

TEST_CASE("tile_range is empty for splats too faint to reach 1/255") {
    const TileGrid grid = TileGrid::for_camera(front_camera(64, 64, 64.0), 16);
    CHECK(tile_range(make_splat({32, 32}, 4.0, 2.0, 0, 0.5 / 255.0), grid).empty());
    CHECK_FALSE(tile_range(make_splat({32, 32}, 4.0, 2.0, 0, 2.0 / 255.0), grid).empty());
}

TEST_CASE("radix sort matches a comparison-sort oracle on 10^4 splats") {
    std::mt19937_64 rng(8);
    for (int tile_size : {8, 16}) {
        const TileGrid grid = TileGrid::for_camera(front_camera(128, 96, 100.0), tile_size);
        std::vector<Splat2D> splats;
        for (std::size_t i = 0; i < 10000; ++i) {
            // some exact depth ties to exercise stability
            const double depth = (i % 10 == 0) ? 5.0 : uniform(rng, 0.2, 50.0);
            splats.push_back(make_splat({uniform(rng, -10, 138), uniform(rng, -10, 106)}, uniform(rng, 0.1, 30.0),
                                        depth, i, uniform(rng, 0.01, 0.99)));
        }
        std::vector<std::tuple<std::uint32_t, double, std::uint32_t>> oracle;
        for (std::uint32_t i = 0; i < splats.size(); ++i) {
            const TileRect r = tile_range(splats[i], grid);
            for (int ty = r.y0; ty < r.y1; ++ty)
                for (int tx = r.x0; tx < r.x1; ++tx)
                    oracle.emplace_back(static_cast<std::uint32_t>(ty * grid.tiles_x + tx), splats[i].depth, i);
        }
        std::sort(oracle.begin(), oracle.end());
        const auto keys = sort_splats(splats, grid);
        REQUIRE(keys.size() == oracle.size());
        bool same = true;
        for (std::size_t k = 0; k < keys.size(); ++k)
            same = same && keys[k].tile_id == std::get<0>(oracle[k]) && keys[k].splat == std::get<2>(oracle[k]);
        CHECK(same);
    }
}

TEST_CASE("single opaque splat at a pixel centre saturates at the alpha clamp") {
    const Camera c = front_camera(17, 17, 17.0);  // principal point on the centre of pixel (8, 8)
    SplatScene scene;
    scene.feature_dim = 3;
    const Eigen::Vector3d f(0.2, -1.0, 3.0);
    scene.gaussians.push_back(isotropic({0, 0, 2}, 0.2, 12.0, f));
    const RenderOutput r = blend_forward(scene, c);
    for (int k = 0; k < 3; ++k) CHECK(r.feature_map.at(8, 8, k) == doctest::Approx(0.99 * f[k]).epsilon(1e-15));
    CHECK(r.transmittance_map.at(8, 8) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(r.contributor_counts[8 * 17 + 8] == 1);
}

TEST_CASE("two half-opaque coincident splats composite front to back") {
    const Camera c = front_camera(17, 17, 17.0);
    SplatScene scene;
    scene.feature_dim = 2;
    scene.gaussians.push_back(isotropic({0, 0, 3}, 0.2, 0.0, Eigen::Vector2d(0, 1)));  // back
    scene.gaussians.push_back(isotropic({0, 0, 2}, 0.2, 0.0, Eigen::Vector2d(1, 0)));  // front
    const RenderOutput r = blend_forward(scene, c);
    CHECK(r.feature_map.at(8, 8, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.feature_map.at(8, 8, 1) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(r.transmittance_map.at(8, 8) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("compositing stops once transmittance falls below 1e-4") {
    const Camera c = front_camera(17, 17, 17.0);
    SplatScene scene;
    scene.feature_dim = 1;
    for (int i = 0; i < 5; ++i)
        scene.gaussians.push_back(isotropic({0, 0, 2.0 + i}, 0.3, 12.0, Eigen::VectorXd::Ones(1)));
    const RenderOutput r = blend_forward(scene, c);
    // T after k splats is 0.01^k: the second one drops T to 1e-4 exactly, the third below it
    CHECK(r.contributor_counts[8 * 17 + 8] == 3);
    CHECK(r.transmittance_map.at(8, 8) == doctest::Approx(1e-6).epsilon(1e-9));
}

TEST_CASE("empty scene renders zeros with full transmittance") {
    SplatScene scene;
    scene.feature_dim = 4;
    const RenderOutput r = blend_forward(scene, front_camera(20, 12, 20.0));
    CHECK(r.feature_map.channels == 4);
    CHECK(std::all_of(r.feature_map.data.begin(), r.feature_map.data.end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(r.transmittance_map.data.begin(), r.transmittance_map.data.end(),
                      [](double v) { return v == 1.0; }));
    const RenderOutput ref = blend_reference(scene, front_camera(20, 12, 20.0));
    CHECK(ref.feature_map.data == r.feature_map.data);
}

TEST_CASE("tiled renderer equals the per-pixel reference") {
    std::mt19937_64 rng(31);
    Camera c = front_camera(50, 37, 45.0);  // partial tiles on both axes
    for (int trial = 0; trial < 10; ++trial) {
        const SplatScene scene = random_scene(rng, 60, 5);
        const RenderOutput ref = blend_reference(scene, c);
        for (int ts : {8, 16, 32})
            for (int threads : {1, 3}) {
                RasterSettings rs;
                rs.tile_size = ts;
                rs.threads = threads;
                const RenderOutput r = blend_forward(scene, c, rs);
                CHECK(r.feature_map.data == ref.feature_map.data);
                CHECK(r.transmittance_map.data == ref.transmittance_map.data);
                CHECK(r.contributor_counts == ref.contributor_counts);
            }
    }
}

TEST_CASE("blend_backward matches finite differences") {
    std::mt19937_64 rng(41);
    const Camera c = front_camera(16, 16, 16.0);
    SplatScene scene = random_scene(rng, 10, 4, 1.0, -1.6, -0.9);
    const ImageBuffer wf = random_image(rng, 16, 16, 4, -1.0, 1.0);
    const ImageBuffer wt = random_image(rng, 16, 16, 1, -1.0, 1.0);
    auto loss = [&] {
        const RenderOutput r = blend_forward(scene, c);
        double l = 0.0;
        for (std::size_t i = 0; i < wf.data.size(); ++i) l += wf.data[i] * r.feature_map.data[i];
        for (std::size_t i = 0; i < wt.data.size(); ++i) l += wt.data[i] * r.transmittance_map.data[i];
        return l;
    };
    const RenderOutput r = blend_forward(scene, c);
    const SceneGradients g = blend_backward(scene, c, r, wf, wt);
    double worst = 0.0;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Gaussian3D& p = scene.gaussians[i];
        const Gaussian3D& d = g.params[i];
        std::vector<std::pair<double*, double>> refs;
        for (int k = 0; k < 3; ++k) refs.emplace_back(&p.position[k], d.position[k]);
        for (int k = 0; k < 4; ++k) refs.emplace_back(&p.rotation[k], d.rotation[k]);
        for (int k = 0; k < 3; ++k) refs.emplace_back(&p.log_scale[k], d.log_scale[k]);
        refs.emplace_back(&p.opacity_logit, d.opacity_logit);
        for (int k = 0; k < 4; ++k) refs.emplace_back(&p.feature[k], d.feature[k]);
        for (auto [ptr, analytic] : refs)
            worst = std::max(worst, relative_error(analytic, central_difference(loss, ptr, 1e-5), 1e-6));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("mean2d gradient matches finite differences on screen-space position") {
    std::mt19937_64 rng(43);
    const Camera c = front_camera(16, 16, 16.0);
    const SplatScene scene = random_scene(rng, 6, 3, 1.0, -1.6, -0.9);
    const ImageBuffer wf = random_image(rng, 16, 16, 3, -1.0, 1.0);
    const RenderOutput r = blend_forward(scene, c);
    const SceneGradients g = blend_backward(scene, c, r, wf);
    // shifting the principal point moves every mean2d by the same pixel offset
    for (int axis = 0; axis < 2; ++axis) {
        Camera shifted = c;
        auto loss = [&] {
            const RenderOutput o = blend_forward(scene, shifted);
            double l = 0.0;
            for (std::size_t i = 0; i < wf.data.size(); ++i) l += wf.data[i] * o.feature_map.data[i];
            return l;
        };
        double* pp = axis == 0 ? &shifted.cx : &shifted.cy;
        const double numeric = central_difference(loss, pp, 1e-5);
        double analytic = 0.0;
        for (const auto& m : g.mean2d) analytic += m[axis];
        CHECK(relative_error(analytic, numeric) < 1e-4);
    }
}

TEST_CASE("blend_backward is deterministic and rejects mismatched inputs") {
    std::mt19937_64 rng(47);
    const Camera c = front_camera(32, 32, 32.0);
    const SplatScene scene = random_scene(rng, 40, 3);
    const ImageBuffer wf = random_image(rng, 32, 32, 3);
    const RenderOutput r = blend_forward(scene, c);
    RasterSettings rs;
    rs.threads = 3;
    const SceneGradients a = blend_backward(scene, c, r, wf, {}, rs), b = blend_backward(scene, c, r, wf, {}, rs);
    const SceneGradients one = blend_backward(scene, c, r, wf);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        CHECK(a.params[i].position == b.params[i].position);
        CHECK(a.params[i].feature == b.params[i].feature);
        CHECK((a.params[i].position - one.params[i].position).norm() <=
              1e-12 * std::max(1.0, one.params[i].position.norm()));
    }
    CHECK_THROWS_AS(blend_backward(scene, c, r, ImageBuffer(32, 32, 2)), ContractViolation);
    SplatScene other = scene;
    other.gaussians.pop_back();
    CHECK_THROWS_AS(blend_backward(other, c, r, wf), ContractViolation);
}
