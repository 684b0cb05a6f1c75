// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/rasterizer.hpp"

#include "featsplat/parallel.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numeric>
#include <string>

namespace featsplat {

namespace {

struct ProjectionTerms {
    Eigen::Vector3d t;              // camera-space centre
    Eigen::Matrix<double, 2, 3> j;  // pinhole Jacobian at t
};

ProjectionTerms projection_terms(const Gaussian3D& g, const Camera& cam) {
    ProjectionTerms p;
    p.t = cam.to_camera(g.position);
    const double z = p.t.z(), iz = 1.0 / z, iz2 = iz * iz;
    p.j << cam.fx * iz, 0.0, -cam.fx * p.t.x() * iz2,
           0.0, cam.fy * iz, -cam.fy * p.t.y() * iz2;
    return p;
}

// Alpha of a splat at a pixel sample point, clamped to kAlphaMax.
// `gauss` receives exp(-power); `clamped` is set when the clamp was active.
inline double splat_alpha(const Splat2D& s, double px, double py, double& gauss, bool& clamped) {
    const double dx = px - s.mean2d.x();
    const double dy = py - s.mean2d.y();
    const double power = 0.5 * (s.conic(0, 0) * dx * dx + s.conic(1, 1) * dy * dy) + s.conic(0, 1) * dx * dy;
    gauss = std::exp(-power);
    const double a = s.alpha_max * gauss;
    clamped = a > kAlphaMax;
    return clamped ? kAlphaMax : a;
}

struct Projected {
    std::vector<Splat2D> splats;
    std::vector<char> visible;  // per Gaussian
};

Projected project_all(const SplatScene& scene, const Camera& cam, double near_plane) {
    Projected out;
    out.visible.assign(scene.size(), 0);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        if (auto s = project(scene.gaussians[i], cam, near_plane)) {
            s->source_index = i;
            out.splats.push_back(*s);
            out.visible[i] = 1;
        }
    }
    return out;
}

struct TileLists {
    std::vector<SplatKey> keys;
    std::vector<std::uint32_t> begin;  // per tile, index into keys
    std::vector<std::uint32_t> end;
};

TileLists bin_splats(std::span<const Splat2D> splats, const TileGrid& grid) {
    TileLists lists;
    lists.keys = sort_splats(splats, grid);
    lists.begin.assign(grid.count(), 0);
    lists.end.assign(grid.count(), 0);
    for (std::size_t k = 0; k < lists.keys.size(); ++k) {
        const auto tile = lists.keys[k].tile_id;
        if (k == 0 || lists.keys[k - 1].tile_id != tile) lists.begin[tile] = static_cast<std::uint32_t>(k);
        lists.end[tile] = static_cast<std::uint32_t>(k + 1);
    }
    return lists;
}

RenderOutput empty_output(const SplatScene& scene, const Camera& cam) {
    RenderOutput out;
    out.feature_map = ImageBuffer(cam.width, cam.height, scene.feature_dim, 0.0);
    out.transmittance_map = ImageBuffer(cam.width, cam.height, 1, 1.0);
    out.contributor_counts.assign(static_cast<std::size_t>(cam.width) * cam.height, 0);
    out.n_gaussians = scene.size();
    return out;
}

// Front-to-back compositing of an ordered splat sequence at one pixel.
template <typename Seq>
void composite_pixel(const SplatScene& scene, std::span<const Splat2D> splats, const Seq& order, int x, int y,
                     RenderOutput& out) {
    const double px = x + 0.5, py = y + 0.5;
    auto f = out.feature_map.pixel(x, y);
    double t = 1.0;
    int count = 0;
    for (const std::uint32_t si : order) {
        const Splat2D& s = splats[si];
        double gauss;
        bool clamped;
        const double alpha = splat_alpha(s, px, py, gauss, clamped);
        if (alpha < kAlphaSkip) continue;
        const double w = alpha * t;
        const auto& feat = scene.gaussians[s.source_index].feature;
        for (std::size_t d = 0; d < f.size(); ++d) f[d] += w * feat[static_cast<Eigen::Index>(d)];
        t *= 1.0 - alpha;
        ++count;
        if (t < kTransmittanceStop) break;
    }
    out.transmittance_map.at(x, y) = t;
    out.contributor_counts[static_cast<std::size_t>(y) * out.feature_map.width + x] = count;
}

struct KeySplatView {
    const SplatKey* first;
    const SplatKey* last;
    struct Iter {
        const SplatKey* p;
        std::uint32_t operator*() const { return p->splat; }
        Iter& operator++() { ++p; return *this; }
        bool operator!=(const Iter& o) const { return p != o.p; }
    };
    Iter begin() const { return {first}; }
    Iter end() const { return {last}; }
};

void check_render_inputs(const SplatScene& scene, const Camera& cam) {
    scene.validate();
    cam.validate();
}

}  // namespace

std::optional<Splat2D> project(const Gaussian3D& g, const Camera& cam, double near_plane) {
    const ProjectionTerms p = projection_terms(g, cam);
    if (!(p.t.z() > near_plane)) return std::nullopt;

    Splat2D s;
    s.depth = p.t.z();
    s.mean2d = {cam.fx * p.t.x() / p.t.z() + cam.cx, cam.fy * p.t.y() / p.t.z() + cam.cy};

    const Eigen::Matrix<double, 2, 3> jw = p.j * cam.rotation_w2c;
    const Eigen::Matrix2d cov = jw * covariance3d(g) * jw.transpose();
    s.cov2d = 0.5 * (cov + cov.transpose());
    const Eigen::Matrix2d dilated = s.cov2d + kLowPassDilation * Eigen::Matrix2d::Identity();
    const double det = dilated.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) return std::nullopt;
    s.conic << dilated(1, 1) / det, -dilated(0, 1) / det,
               -dilated(1, 0) / det, dilated(0, 0) / det;

    const double rx = 3.0 * std::sqrt(dilated(0, 0));
    const double ry = 3.0 * std::sqrt(dilated(1, 1));
    if (s.mean2d.x() + rx < 0.0 || s.mean2d.x() - rx > cam.width || s.mean2d.y() + ry < 0.0 ||
        s.mean2d.y() - ry > cam.height)
        return std::nullopt;

    s.alpha_max = g.opacity();
    return s;
}

TileGrid TileGrid::for_camera(const Camera& cam, int tile_size) {
    if (tile_size < 1) throw InvalidInput("tile size must be positive");
    TileGrid grid;
    grid.tile_size = tile_size;
    grid.width = cam.width;
    grid.height = cam.height;
    grid.tiles_x = (cam.width + tile_size - 1) / tile_size;
    grid.tiles_y = (cam.height + tile_size - 1) / tile_size;
    return grid;
}

TileRect tile_range(const Splat2D& s, const TileGrid& grid) {
    // alpha >= 1/255 requires power <= ln(255 * alpha_max); that region is the
    // ellipse d^T conic d <= 2 ln(255 * alpha_max).
    const double reach = 255.0 * s.alpha_max;
    if (!(reach >= 1.0)) return {};
    const double k = std::sqrt(2.0 * std::log(reach));
    const double det = s.conic.determinant();
    const double rx = k * std::sqrt(s.conic(1, 1) / det);
    const double ry = k * std::sqrt(s.conic(0, 0) / det);

    // pixel u is covered when |u + 0.5 - mean| <= r; pad one pixel against rounding
    const double ux0 = std::ceil(s.mean2d.x() - rx - 0.5) - 1.0;
    const double ux1 = std::floor(s.mean2d.x() + rx - 0.5) + 1.0;
    const double uy0 = std::ceil(s.mean2d.y() - ry - 0.5) - 1.0;
    const double uy1 = std::floor(s.mean2d.y() + ry - 0.5) + 1.0;
    const int px0 = static_cast<int>(std::clamp(ux0, 0.0, double(grid.width - 1)));
    const int px1 = static_cast<int>(std::clamp(ux1, -1.0, double(grid.width - 1)));
    const int py0 = static_cast<int>(std::clamp(uy0, 0.0, double(grid.height - 1)));
    const int py1 = static_cast<int>(std::clamp(uy1, -1.0, double(grid.height - 1)));
    if (ux1 < 0.0 || uy1 < 0.0 || ux0 > grid.width - 1 || uy0 > grid.height - 1 || px1 < px0 || py1 < py0)
        return {};
    return {px0 / grid.tile_size, py0 / grid.tile_size, px1 / grid.tile_size + 1, py1 / grid.tile_size + 1};
}

std::uint64_t depth_key(double depth) {
    const auto bits = std::bit_cast<std::uint64_t>(depth);
    constexpr std::uint64_t sign = std::uint64_t{1} << 63;
    return (bits & sign) ? ~bits : (bits | sign);
}

std::vector<SplatKey> sort_splats(std::span<const Splat2D> splats, const TileGrid& grid) {
    std::vector<SplatKey> keys;
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const TileRect r = tile_range(splats[i], grid);
        const std::uint64_t dk = depth_key(splats[i].depth);
        for (int ty = r.y0; ty < r.y1; ++ty)
            for (int tx = r.x0; tx < r.x1; ++tx)
                keys.push_back({static_cast<std::uint32_t>(ty * grid.tiles_x + tx), dk, static_cast<std::uint32_t>(i)});
    }

    // LSD radix over 12 byte digits: 8 depth bytes, then 4 tile bytes.
    std::vector<SplatKey> scratch(keys.size());
    auto digit = [](const SplatKey& k, int pass) -> unsigned {
        if (pass < 8) return static_cast<unsigned>((k.depth_bits >> (8 * pass)) & 0xFFu);
        return static_cast<unsigned>((k.tile_id >> (8 * (pass - 8))) & 0xFFu);
    };
    for (int pass = 0; pass < 12; ++pass) {
        std::array<std::size_t, 257> offsets{};
        for (const auto& k : keys) ++offsets[digit(k, pass) + 1];
        if (std::any_of(offsets.begin() + 1, offsets.end(), [&](std::size_t c) { return c == keys.size(); }))
            continue;  // every key shares this digit
        std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
        for (const auto& k : keys) scratch[offsets[digit(k, pass)]++] = k;
        keys.swap(scratch);
    }
    return keys;
}

RenderOutput blend_forward(const SplatScene& scene, const Camera& cam, const RasterSettings& settings) {
    check_render_inputs(scene, cam);
    RenderOutput out = empty_output(scene, cam);
    const Projected proj = project_all(scene, cam, settings.near_plane);
    const TileGrid grid = TileGrid::for_camera(cam, settings.tile_size);
    const TileLists lists = bin_splats(proj.splats, grid);

    parallel_chunks(grid.count(), resolve_threads(settings.threads), [&](std::size_t b, std::size_t e, std::size_t) {
        for (std::size_t tile = b; tile < e; ++tile) {
            const int tx = static_cast<int>(tile) % grid.tiles_x;
            const int ty = static_cast<int>(tile) / grid.tiles_x;
            const KeySplatView order{lists.keys.data() + lists.begin[tile], lists.keys.data() + lists.end[tile]};
            const int x_end = std::min(cam.width, (tx + 1) * grid.tile_size);
            const int y_end = std::min(cam.height, (ty + 1) * grid.tile_size);
            for (int y = ty * grid.tile_size; y < y_end; ++y)
                for (int x = tx * grid.tile_size; x < x_end; ++x)
                    composite_pixel(scene, proj.splats, order, x, y, out);
        }
    });
    return out;
}

RenderOutput blend_reference(const SplatScene& scene, const Camera& cam, double near_plane) {
    check_render_inputs(scene, cam);
    RenderOutput out = empty_output(scene, cam);
    const Projected proj = project_all(scene, cam, near_plane);

    std::vector<std::uint32_t> order;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            order.clear();
            for (std::uint32_t i = 0; i < proj.splats.size(); ++i) {
                double gauss;
                bool clamped;
                if (splat_alpha(proj.splats[i], x + 0.5, y + 0.5, gauss, clamped) >= kAlphaSkip) order.push_back(i);
            }
            std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
                return proj.splats[a].depth < proj.splats[b].depth;
            });
            composite_pixel(scene, proj.splats, order, x, y, out);
        }
    }
    return out;
}

SceneGradients SceneGradients::zeros(const SplatScene& scene) {
    SceneGradients g;
    g.params.reserve(scene.size());
    for (const auto& gs : scene.gaussians) g.params.push_back(Gaussian3D::zeros_like(gs));
    g.mean2d.assign(scene.size(), Eigen::Vector2d::Zero());
    g.visible.assign(scene.size(), 0);
    return g;
}

namespace {

// Layout of the per-splat screen-space gradient record.
constexpr int kGradMeanX = 0, kGradMeanY = 1, kGradConic00 = 2, kGradConic01 = 3, kGradConic11 = 4,
              kGradAlpha = 5, kGradFeature = 6;

struct PixelContribution {
    std::uint32_t splat;
    double alpha;
    double t_before;
    double gauss;
    bool clamped;
};

Eigen::Vector4d quaternion_grad(const Eigen::Vector4d& q_raw, const Eigen::Matrix3d& g) {
    const double norm = q_raw.norm();
    const Eigen::Vector4d q = q_raw / norm;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Vector4d gq;
    gq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    gq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                 w * g(2, 1) - 2 * x * g(2, 2));
    gq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                 z * g(2, 1) - 2 * y * g(2, 2));
    gq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                 x * g(2, 0) + y * g(2, 1));
    // through q / |q|
    return (gq - q * q.dot(gq)) / norm;
}

// Chains screen-space gradients of one splat back to its Gaussian's parameters.
void splat_to_gaussian(const Gaussian3D& g, const Camera& cam, const Splat2D& s, const double* rec,
                       Gaussian3D& out, Eigen::Vector2d& mean2d_out) {
    const Eigen::Vector2d g_mean(rec[kGradMeanX], rec[kGradMeanY]);
    Eigen::Matrix2d g_conic;
    g_conic << rec[kGradConic00], rec[kGradConic01], rec[kGradConic01], rec[kGradConic11];
    const double g_alpha = rec[kGradAlpha];

    const double a = s.alpha_max;
    out.opacity_logit += g_alpha * a * (1.0 - a);
    for (Eigen::Index d = 0; d < out.feature.size(); ++d) out.feature[d] += rec[kGradFeature + d];
    mean2d_out += g_mean;

    const Eigen::Matrix2d g_cov = -s.conic * g_conic * s.conic;

    const ProjectionTerms p = projection_terms(g, cam);
    const Eigen::Matrix3d& w = cam.rotation_w2c;
    const Eigen::Matrix<double, 2, 3> jw = p.j * w;
    const Eigen::Matrix3d rot = rotation_matrix(g.rotation);
    const Eigen::Vector3d scale = g.scale();
    const Eigen::Matrix3d m = rot * scale.asDiagonal();
    const Eigen::Matrix3d sigma = m * m.transpose();

    const Eigen::Matrix3d g_sigma = jw.transpose() * g_cov * jw;
    const Eigen::Matrix<double, 2, 3> g_jw = 2.0 * g_cov * jw * sigma;
    const Eigen::Matrix<double, 2, 3> g_j = g_jw * w.transpose();

    const double x = p.t.x(), y = p.t.y(), z = p.t.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Eigen::Vector3d g_t;
    g_t.x() = g_j(0, 2) * (-cam.fx * iz2) + g_mean.x() * cam.fx * iz;
    g_t.y() = g_j(1, 2) * (-cam.fy * iz2) + g_mean.y() * cam.fy * iz;
    g_t.z() = g_j(0, 0) * (-cam.fx * iz2) + g_j(0, 2) * (2.0 * cam.fx * x * iz3) + g_j(1, 1) * (-cam.fy * iz2) +
              g_j(1, 2) * (2.0 * cam.fy * y * iz3) - g_mean.x() * cam.fx * x * iz2 - g_mean.y() * cam.fy * y * iz2;
    out.position += w.transpose() * g_t;

    const Eigen::Matrix3d g_m = 2.0 * g_sigma * m;
    const Eigen::Matrix3d g_rot = g_m * scale.asDiagonal();
    const Eigen::Matrix3d rt_gm = rot.transpose() * g_m;
    for (int k = 0; k < 3; ++k) out.log_scale[k] += rt_gm(k, k) * scale[k];
    out.rotation += quaternion_grad(g.rotation, g_rot);
}

}  // namespace

SceneGradients blend_backward(const SplatScene& scene, const Camera& cam, const RenderOutput& output,
                              const ImageBuffer& dL_dfeature, const ImageBuffer& dL_dtransmittance,
                              const RasterSettings& settings) {
    check_render_inputs(scene, cam);
    if (output.n_gaussians != scene.size() || output.feature_map.width != cam.width ||
        output.feature_map.height != cam.height || output.feature_map.channels != scene.feature_dim)
        throw ContractViolation("blend_backward: render output does not belong to this scene and camera");
    if (!dL_dfeature.same_shape(output.feature_map))
        throw ContractViolation("blend_backward: feature gradient shape mismatch");
    const bool has_t_grad = !dL_dtransmittance.data.empty();
    if (has_t_grad && !dL_dtransmittance.same_shape(output.transmittance_map))
        throw ContractViolation("blend_backward: transmittance gradient shape mismatch");

    const Projected proj = project_all(scene, cam, settings.near_plane);
    const TileGrid grid = TileGrid::for_camera(cam, settings.tile_size);
    const TileLists lists = bin_splats(proj.splats, grid);

    const int dim = scene.feature_dim;
    const std::size_t stride = kGradFeature + static_cast<std::size_t>(dim);
    const int threads = resolve_threads(settings.threads);
    const std::size_t chunks = chunk_count(grid.count(), threads);
    std::vector<std::vector<double>> partial(chunks, std::vector<double>(proj.splats.size() * stride, 0.0));

    parallel_chunks(grid.count(), threads, [&](std::size_t b, std::size_t e, std::size_t chunk) {
        std::vector<double>& acc_buf = partial[chunk];
        std::vector<PixelContribution> contribs;
        for (std::size_t tile = b; tile < e; ++tile) {
            const int tx = static_cast<int>(tile) % grid.tiles_x;
            const int ty = static_cast<int>(tile) / grid.tiles_x;
            const int x_end = std::min(cam.width, (tx + 1) * grid.tile_size);
            const int y_end = std::min(cam.height, (ty + 1) * grid.tile_size);
            for (int y = ty * grid.tile_size; y < y_end; ++y) {
                for (int x = tx * grid.tile_size; x < x_end; ++x) {
                    const double px = x + 0.5, py = y + 0.5;
                    // replay the forward pass for this pixel
                    contribs.clear();
                    double t = 1.0;
                    for (std::uint32_t k = lists.begin[tile]; k < lists.end[tile]; ++k) {
                        const std::uint32_t si = lists.keys[k].splat;
                        double gauss;
                        bool clamped;
                        const double alpha = splat_alpha(proj.splats[si], px, py, gauss, clamped);
                        if (alpha < kAlphaSkip) continue;
                        contribs.push_back({si, alpha, t, gauss, clamped});
                        t *= 1.0 - alpha;
                        if (t < kTransmittanceStop) break;
                    }
                    const std::size_t pix = static_cast<std::size_t>(y) * cam.width + x;
                    if (static_cast<int>(contribs.size()) != output.contributor_counts[pix] ||
                        t != output.transmittance_map.data[pix])
                        throw ContractViolation("blend_backward: forward result does not match scene at pixel (" +
                                                std::to_string(x) + ", " + std::to_string(y) + ")");

                    const auto g_f = dL_dfeature.pixel(x, y);
                    double acc = has_t_grad ? t * dL_dtransmittance.data[pix] : 0.0;
                    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                        const Splat2D& s = proj.splats[it->splat];
                        const auto& feat = scene.gaussians[s.source_index].feature;
                        double* rec = acc_buf.data() + it->splat * stride;
                        const double w = it->alpha * it->t_before;
                        double dot = 0.0;
                        for (int d = 0; d < dim; ++d) {
                            rec[kGradFeature + d] += w * g_f[d];
                            dot += feat[d] * g_f[d];
                        }
                        const double g_alpha = it->t_before * dot - acc / (1.0 - it->alpha);
                        acc += w * dot;
                        if (it->clamped) continue;

                        rec[kGradAlpha] += g_alpha * it->gauss;
                        const double g_power = -g_alpha * it->alpha;
                        const double dx = px - s.mean2d.x(), dy = py - s.mean2d.y();
                        rec[kGradConic00] += 0.5 * g_power * dx * dx;
                        rec[kGradConic01] += 0.5 * g_power * dx * dy;
                        rec[kGradConic11] += 0.5 * g_power * dy * dy;
                        const Eigen::Vector2d kd = s.conic * Eigen::Vector2d(dx, dy);
                        rec[kGradMeanX] -= g_power * kd.x();
                        rec[kGradMeanY] -= g_power * kd.y();
                    }
                }
            }
        }
    });

    for (std::size_t c = 1; c < chunks; ++c)
        for (std::size_t i = 0; i < partial[0].size(); ++i) partial[0][i] += partial[c][i];

    SceneGradients grads = SceneGradients::zeros(scene);
    grads.visible = proj.visible;
    for (std::size_t si = 0; si < proj.splats.size(); ++si) {
        const Splat2D& s = proj.splats[si];
        splat_to_gaussian(scene.gaussians[s.source_index], cam, s, partial[0].data() + si * stride,
                          grads.params[s.source_index], grads.mean2d[s.source_index]);
    }
    return grads;
}

}  // namespace featsplat
