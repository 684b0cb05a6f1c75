// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/camera.hpp"
#include "featsplat/scene.hpp"

#include "../support/test_support.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <filesystem>
#include <fstream>

using namespace featsplat;
using namespace featsplat::testing;

namespace {
Gaussian3D blank(int dim) {
    Gaussian3D g;
    g.feature = Eigen::VectorXd::Zero(dim);
    return g;
}
}  // namespace

TEST_CASE("init_scene places one Gaussian per seed point with default parameters") {
    const std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {0, 0, 3}};
    const SplatScene s = init_scene(pts, 16, 0, 1);
    REQUIRE(s.size() == 4);
    CHECK(s.feature_dim == 16);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Gaussian3D& g = s.gaussians[i];
        CHECK(g.position == pts[i]);
        CHECK(g.rotation == Eigen::Vector4d(1, 0, 0, 0));
        CHECK(g.opacity() == doctest::Approx(0.1).epsilon(1e-12));
        CHECK(g.feature.size() == 16);
    }
    // nearest-neighbour mean distance of point 0: (1 + 2 + 3) / 3
    CHECK(s.gaussians[0].scale()[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("init_scene feature statistics follow a standard normal") {
    std::mt19937_64 rng(9);
    std::vector<Eigen::Vector3d> pts(10000);
    for (auto& p : pts) p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const SplatScene s = init_scene(pts, 32, 0, 1234);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& g : s.gaussians)
        for (Eigen::Index k = 0; k < g.feature.size(); ++k, ++n) {
            sum += g.feature[k];
            sq += g.feature[k] * g.feature[k];
        }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("init_scene is deterministic per seed and rejects bad input") {
    const std::vector<Eigen::Vector3d> pts = {{0, 0, 0}, {1, 1, 1}};
    const SplatScene a = init_scene(pts, 8, 0, 5), b = init_scene(pts, 8, 0, 5), c = init_scene(pts, 8, 0, 6);
    CHECK(a.gaussians[1].feature == b.gaussians[1].feature);
    CHECK(a.gaussians[1].feature != c.gaussians[1].feature);
    CHECK_THROWS_AS(init_scene({}, 8, 0, 1), InvalidInput);
    CHECK_THROWS_AS(init_scene(pts, 2, 0, 1), InvalidInput);
    CHECK_THROWS_AS(init_scene(pts, 65, 0, 1), InvalidInput);
}

TEST_CASE("covariance3d closed forms") {
    Gaussian3D g = blank(3);
    g.rotation = {1, 0, 0, 0};
    g.log_scale = Eigen::Vector3d::Zero();
    CHECK(covariance3d(g).isApprox(Eigen::Matrix3d::Identity(), 1e-15));
    g.log_scale = {std::log(2.0), 0, 0};
    const Eigen::Matrix3d expect = Eigen::Vector3d(4, 1, 1).asDiagonal();
    CHECK((covariance3d(g) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("covariance3d eigenvalues are the squared scales") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        Gaussian3D g = blank(1);
        g.rotation = random_quaternion(rng) * uniform(rng, 0.5, 2.0);  // unnormalized on purpose
        g.log_scale = {uniform(rng, -3, 1), uniform(rng, -3, 1), uniform(rng, -3, 1)};
        const Eigen::Matrix3d cov = covariance3d(g);
        // oracle: rotate the diagonal by an independently built rotation
        const Eigen::Vector4d q = g.rotation.normalized();
        const Eigen::Matrix3d r = Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
        const Eigen::Matrix3d oracle = r * (2.0 * g.log_scale).array().exp().matrix().asDiagonal() * r.transpose();
        CHECK((cov - oracle).cwiseAbs().maxCoeff() < 1e-9);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
        Eigen::Vector3d want = (2.0 * g.log_scale).array().exp();
        std::sort(want.data(), want.data() + 3);
        for (int k = 0; k < 3; ++k) CHECK(std::abs(es.eigenvalues()[k] - want[k]) <= 1e-9 * std::max(1.0, want[k]));
        CHECK(es.eigenvalues().minCoeff() > 0.0);  // positive definite
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("scene validation") {
    SplatScene s;
    s.feature_dim = 4;
    s.gaussians.push_back(blank(4));
    CHECK_NOTHROW(s.validate());
    s.gaussians[0].feature.resize(3);
    CHECK_THROWS_AS(s.validate(), InvalidInput);
}

TEST_CASE("read_points_xyz skips comments and blank lines") {
    const auto path = std::filesystem::temp_directory_path() / "featsplat_points_test.xyz";
    {
        std::ofstream out(path);
        out << "# header\n1 2 3\n\n4.5 -1 0\n";
    }
    const auto pts = read_points_xyz(path);
    REQUIRE(pts.size() == 2);
    CHECK(pts[1] == Eigen::Vector3d(4.5, -1, 0));
    {
        std::ofstream out(path);
        out << "1 2\n";
    }
    CHECK_THROWS(read_points_xyz(path));
    std::filesystem::remove(path);
}

TEST_CASE("camera pose helpers") {
    const Camera c = look_at({0, -4, 1}, {0, 0, 0}, {0, 0, 1}, 64, 48, 50, 50);
    CHECK_NOTHROW(c.validate());
    CHECK((c.center() - Eigen::Vector3d(0, -4, 1)).norm() < 1e-12);
    const Eigen::Vector3d target_cam = c.to_camera(Eigen::Vector3d::Zero());
    CHECK(std::abs(target_cam.x()) < 1e-12);
    CHECK(std::abs(target_cam.y()) < 1e-12);
    CHECK(target_cam.z() > 0.0);
    CHECK(c.cx == 32.0);
    CHECK(c.cy == 24.0);

    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Vector3d a(uniform(rng, -1.5, 1.5), uniform(rng, -1.4, 1.4), uniform(rng, -3, 3));
        Camera cam;
        cam.rotation_w2c = rotation_from_euler_xyz(a).transpose();
        CHECK((cam.euler_xyz() - a).norm() < 1e-9);
    }
    Camera bad;
    bad.rotation_w2c(0, 0) = 2.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad = Camera{};
    bad.fx = 0.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}
