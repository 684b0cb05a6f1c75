// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/camera.hpp"
#include "featsplat/common.hpp"
#include "featsplat/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace featsplat {

inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaSkip = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kLowPassDilation = 0.3;

struct RasterSettings {
    int tile_size = 16;
    double near_plane = 0.2;
    int threads = 1;
};

/// A Gaussian projected into one camera.
struct Splat2D {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;  // before dilation
    Eigen::Matrix2d conic;  // inverse of the dilated covariance
    double depth = 0.0;
    double alpha_max = 0.0;
    std::size_t source_index = 0;
};

/// Culls Gaussians at or in front of the near plane and those whose 3-sigma
/// ellipse misses the image.
std::optional<Splat2D> project(const Gaussian3D& g, const Camera& cam, double near_plane);

struct TileGrid {
    int tile_size = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    int width = 0;
    int height = 0;

    static TileGrid for_camera(const Camera& cam, int tile_size);
    int count() const { return tiles_x * tiles_y; }
};

/// Half-open tile rectangle [x0, x1) x [y0, y1).
struct TileRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool empty() const { return x0 >= x1 || y0 >= y1; }
    int area() const { return empty() ? 0 : (x1 - x0) * (y1 - y0); }
};

/// Tiles containing a pixel centre where the splat can reach alpha >= 1/255.
TileRect tile_range(const Splat2D& s, const TileGrid& grid);

/// One splat/tile overlap.
struct SplatKey {
    std::uint32_t tile_id = 0;
    std::uint64_t depth_bits = 0;  // order-preserving image of the binary64 depth
    std::uint32_t splat = 0;       // index into the splat list
};

/// Order-preserving map from a double to unsigned bits (total order, -0 < +0).
std::uint64_t depth_key(double depth);

/// Emits one key per (splat, overlapped tile) and LSD-radix sorts them by
/// (tile_id, depth). The sort is stable: ties keep input order.
std::vector<SplatKey> sort_splats(std::span<const Splat2D> splats, const TileGrid& grid);

/// Blended per-pixel features plus what the backward pass needs to check it
/// was given a matching forward result.
struct RenderOutput {
    ImageBuffer feature_map;       // H x W x D
    ImageBuffer transmittance_map; // H x W x 1
    std::vector<int> contributor_counts;  // H x W
    std::size_t n_gaussians = 0;
};

RenderOutput blend_forward(const SplatScene& scene, const Camera& cam, const RasterSettings& settings = {});

/// Brute-force oracle: every projected splat evaluated at every pixel,
/// ordered by a comparison sort on depth. No tiling.
RenderOutput blend_reference(const SplatScene& scene, const Camera& cam, double near_plane = 0.2);

struct SceneGradients {
    std::vector<Gaussian3D> params;           // same shapes as the scene
    std::vector<Eigen::Vector2d> mean2d;      // dL/d(mean2d) in pixels
    std::vector<char> visible;                // projected and inside the image this pass

    static SceneGradients zeros(const SplatScene& scene);
};

/// Exact reverse-mode gradients of the blended feature map (and, optionally,
/// the residual transmittance) w.r.t. every Gaussian parameter.
/// `dL_dtransmittance` may be an empty buffer.
SceneGradients blend_backward(const SplatScene& scene, const Camera& cam, const RenderOutput& output,
                              const ImageBuffer& dL_dfeature, const ImageBuffer& dL_dtransmittance = {},
                              const RasterSettings& settings = {});

}  // namespace featsplat
