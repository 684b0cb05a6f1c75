// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/camera.hpp"

#include "featsplat/common.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

namespace featsplat {

Eigen::Vector3d Camera::center() const {
    return -rotation_w2c.transpose() * translation_w2c;
}

Eigen::Vector3d Camera::euler_xyz() const {
    const Eigen::Matrix3d r = rotation_w2c.transpose();
    const double b = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
    const double a = std::atan2(-r(1, 2), r(2, 2));
    const double c = std::atan2(-r(0, 1), r(0, 0));
    return {a, b, c};
}

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidInput("camera focal lengths must be positive");
    if (width < 1 || height < 1) throw InvalidInput("camera width and height must be at least 1");
    if (!rotation_w2c.allFinite() || !translation_w2c.allFinite() || !std::isfinite(cx) ||
        !std::isfinite(cy))
        throw InvalidInput("camera has non-finite parameters");
    const double err = (rotation_w2c * rotation_w2c.transpose() - Eigen::Matrix3d::Identity())
                           .cwiseAbs()
                           .maxCoeff();
    if (err > 1e-9) throw InvalidInput("camera rotation is not orthonormal");
}

Eigen::Matrix3d rotation_from_euler_xyz(const Eigen::Vector3d& angles) {
    return (Eigen::AngleAxisd(angles.x(), Eigen::Vector3d::UnitX()) *
            Eigen::AngleAxisd(angles.y(), Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(angles.z(), Eigen::Vector3d::UnitZ()))
        .toRotationMatrix();
}

Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
               int width, int height, double fx, double fy) {
    const Eigen::Vector3d z = (target - eye).normalized();
    Eigen::Vector3d x = z.cross(up);
    if (x.norm() < 1e-12) throw InvalidInput("look_at: up vector parallel to viewing direction");
    x.normalize();
    const Eigen::Vector3d y = z.cross(x);

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.rotation_w2c.row(0) = x.transpose();
    cam.rotation_w2c.row(1) = y.transpose();
    cam.rotation_w2c.row(2) = z.transpose();
    cam.translation_w2c = -cam.rotation_w2c * eye;
    return cam;
}

}  // namespace featsplat
