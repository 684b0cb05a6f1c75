// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/scene.hpp"

#include "featsplat/common.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace featsplat {

Gaussian3D Gaussian3D::zeros_like(const Gaussian3D& g) {
    Gaussian3D z;
    z.position.setZero();
    z.rotation.setZero();
    z.log_scale.setZero();
    z.opacity_logit = 0.0;
    z.feature = Eigen::VectorXd::Zero(g.feature.size());
    return z;
}

void SplatScene::validate() const {
    if (feature_dim < 1) throw InvalidInput("scene feature_dim must be positive");
    if (class_count < 0) throw InvalidInput("scene class_count must be non-negative");
    for (std::size_t i = 0; i < gaussians.size(); ++i)
        if (gaussians[i].feature.size() != feature_dim)
            throw InvalidInput("gaussian " + std::to_string(i) + " has feature length " +
                               std::to_string(gaussians[i].feature.size()) + ", expected " +
                               std::to_string(feature_dim));
}

Eigen::Matrix3d rotation_matrix(const Eigen::Vector4d& q_raw) {
    const Eigen::Vector4d q = q_raw.normalized();
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Matrix3d r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Matrix3d covariance3d(const Gaussian3D& g) {
    const Eigen::Matrix3d m = rotation_matrix(g.rotation) * g.scale().asDiagonal();
    const Eigen::Matrix3d s = m * m.transpose();
    return 0.5 * (s + s.transpose());
}

namespace {

double mean_knn_distance(std::span<const Eigen::Vector3d> pts, std::size_t i, std::size_t k) {
    std::array<double, 3> best;
    best.fill(std::numeric_limits<double>::infinity());
    for (std::size_t j = 0; j < pts.size(); ++j) {
        if (j == i) continue;
        const double d2 = (pts[j] - pts[i]).squaredNorm();
        if (d2 < best[k - 1]) {
            best[k - 1] = d2;
            std::sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(k));
        }
    }
    double sum = 0.0;
    for (std::size_t n = 0; n < k; ++n) sum += std::sqrt(best[n]);
    return sum / static_cast<double>(k);
}

}  // namespace

SplatScene init_scene(std::span<const Eigen::Vector3d> seed_points, int feature_dim, int class_count,
                      std::uint64_t rng_seed) {
    if (seed_points.empty()) throw InvalidInput("init_scene: seed point list is empty");
    if (feature_dim < 3 || feature_dim > 64)
        throw InvalidInput("init_scene: feature dimension must be in [3, 64]");
    if (class_count < 0) throw InvalidInput("init_scene: class count must be non-negative");

    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    SplatScene scene;
    scene.feature_dim = feature_dim;
    scene.class_count = class_count;
    scene.gaussians.reserve(seed_points.size());

    const std::size_t k = std::min<std::size_t>(3, seed_points.size() - 1);
    for (std::size_t i = 0; i < seed_points.size(); ++i) {
        Gaussian3D g;
        g.position = seed_points[i];
        g.rotation = Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
        // a lone seed point has no neighbours; fall back to unit scale
        const double dist = k == 0 ? 1.0 : std::max(mean_knn_distance(seed_points, i, k), 1e-7);
        g.log_scale = Eigen::Vector3d::Constant(std::log(dist));
        g.opacity_logit = logit(0.1);
        g.feature.resize(feature_dim);
        for (int d = 0; d < feature_dim; ++d) g.feature[d] = normal(rng);
        scene.gaussians.push_back(std::move(g));
    }
    return scene;
}

std::vector<Eigen::Vector3d> read_points_xyz(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open point file " + path.string());
    std::vector<Eigen::Vector3d> pts;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        double x, y, z;
        if (!(ss >> x >> y >> z))
            throw LoadError(path.string() + ":" + std::to_string(line_no) + ": expected 'x y z'");
        pts.emplace_back(x, y, z);
    }
    return pts;
}

}  // namespace featsplat
