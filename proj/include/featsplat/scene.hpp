// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace featsplat {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// One splat primitive. All fields are unconstrained reals: the quaternion is
/// normalized at use sites, scale lives in log space and opacity in logit space.
struct Gaussian3D {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    Eigen::Vector4d rotation{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z)
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::VectorXd feature;

    double opacity() const { return sigmoid(opacity_logit); }
    Eigen::Vector3d scale() const { return log_scale.array().exp(); }

    /// Same shape, every value zero. Gradients reuse this type.
    static Gaussian3D zeros_like(const Gaussian3D& g);
};

struct SplatScene {
    std::vector<Gaussian3D> gaussians;
    int feature_dim = 0;
    int class_count = 0;  // 0 = RGB only

    std::size_t size() const { return gaussians.size(); }

    /// Throws InvalidInput when a Gaussian's feature length differs from feature_dim.
    void validate() const;
};

/// Rotation matrix of the normalized quaternion (w, x, y, z).
Eigen::Matrix3d rotation_matrix(const Eigen::Vector4d& q);

/// R S S^T R^T.
Eigen::Matrix3d covariance3d(const Gaussian3D& g);

/// One Gaussian per seed point with N(0,1) features drawn from a generator
/// seeded with `rng_seed`, identity rotation, opacity 0.1 and isotropic scale
/// equal to the mean distance to the three nearest other seed points.
SplatScene init_scene(std::span<const Eigen::Vector3d> seed_points, int feature_dim, int class_count,
                      std::uint64_t rng_seed);

/// Reads whitespace-separated "x y z" lines; blank lines and '#' comments are skipped.
std::vector<Eigen::Vector3d> read_points_xyz(const std::filesystem::path& path);

}  // namespace featsplat
