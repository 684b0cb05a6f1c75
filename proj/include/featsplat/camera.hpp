// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

namespace featsplat {

/// Pinhole camera with a world-to-camera pose. The camera looks down +z,
/// image x grows right and y grows down, pixel origin at the top-left corner.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    Eigen::Matrix3d rotation_w2c = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation_w2c = Eigen::Vector3d::Zero();

    /// Camera position in world coordinates, -R^T t.
    Eigen::Vector3d center() const;

    /// Intrinsic XYZ Euler angles (radians) of the camera-to-world rotation R^T.
    Eigen::Vector3d euler_xyz() const;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return rotation_w2c * world + translation_w2c;
    }

    /// Throws InvalidInput when intrinsics or the rotation are unusable.
    void validate() const;
};

/// Rotation matrix for intrinsic XYZ Euler angles: Rx(a) * Ry(b) * Rz(c).
Eigen::Matrix3d rotation_from_euler_xyz(const Eigen::Vector3d& angles);

/// Camera at `eye` looking at `target`; `up` is the approximate world up direction.
Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
               int width, int height, double fx, double fy);

}  // namespace featsplat
