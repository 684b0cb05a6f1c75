// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit and acceptance tests: random generators, finite
// differences and a plain composition of the render/decode/loss pipeline.

#pragma once

#include "featsplat/camera.hpp"
#include "featsplat/decoder.hpp"
#include "featsplat/losses.hpp"
#include "featsplat/rasterizer.hpp"
#include "featsplat/scene.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace featsplat::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Eigen::Vector4d random_quaternion(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Vector4d q(n(rng), n(rng), n(rng), n(rng));
    return q.normalized();
}

/// Random scene in front of a camera at the origin looking down +z.
/// Depths are drawn without replacement from a jittered ladder so they are distinct.
inline SplatScene random_scene(std::mt19937_64& rng, int count, int feature_dim, double spread = 1.0,
                               double log_scale_lo = -2.5, double log_scale_hi = -1.0) {
    SplatScene s;
    s.feature_dim = feature_dim;
    std::vector<double> depths(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) depths[static_cast<std::size_t>(i)] = 2.0 + 3.0 * (i + uniform(rng, 0.1, 0.9)) / count;
    std::shuffle(depths.begin(), depths.end(), rng);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < count; ++i) {
        Gaussian3D g;
        const double z = depths[static_cast<std::size_t>(i)];
        g.position = {uniform(rng, -spread, spread) * z / 3.0, uniform(rng, -spread, spread) * z / 3.0, z};
        g.rotation = random_quaternion(rng);
        g.log_scale = {uniform(rng, log_scale_lo, log_scale_hi), uniform(rng, log_scale_lo, log_scale_hi),
                       uniform(rng, log_scale_lo, log_scale_hi)};
        g.opacity_logit = uniform(rng, -1.5, 2.5);
        g.feature.resize(feature_dim);
        for (int k = 0; k < feature_dim; ++k) g.feature[k] = n(rng);
        s.gaussians.push_back(std::move(g));
    }
    return s;
}

/// Pinhole camera at the origin looking down +z with focal = size.
inline Camera front_camera(int width, int height, double focal) {
    Camera c;
    c.width = width;
    c.height = height;
    c.fx = focal;
    c.fy = focal;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.rotation_w2c = Eigen::Matrix3d::Identity();
    c.translation_w2c = Eigen::Vector3d::Zero();
    return c;
}

inline ImageBuffer random_image(std::mt19937_64& rng, int w, int h, int c, double lo = 0.0, double hi = 1.0) {
    ImageBuffer img(w, h, c);
    for (double& v : img.data) v = uniform(rng, lo, hi);
    return img;
}

/// Central difference of f with respect to *x.
inline double central_difference(const std::function<double()>& f, double* x, double h) {
    const double saved = *x;
    *x = saved + h;
    const double fp = f();
    *x = saved - h;
    const double fm = f();
    *x = saved;
    return (fp - fm) / (2.0 * h);
}

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Everything the end-to-end pipeline needs besides the parameters.
struct PipelineCase {
    Camera camera;
    ImageBuffer target;
    LabelMap labels;
    bool semantic = false;
    LossConfig loss;
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    int tile_size = 16;
};

inline double pipeline_loss(const SplatScene& scene, const Decoder& dec, const PipelineCase& pc) {
    RasterSettings rs;
    rs.tile_size = pc.tile_size;
    const RenderOutput r = blend_forward(scene, pc.camera, rs);
    const DecodedImage d = decode_image(r, pc.camera, dec, pc.background);
    return total_loss(d.rgb, pc.target, pc.semantic ? &d.logits : nullptr, pc.semantic ? &pc.labels : nullptr,
                      pc.loss)
        .total;
}

struct PipelineGradients {
    double loss = 0.0;
    SceneGradients scene;
    Decoder decoder;
};

inline PipelineGradients pipeline_gradients(const SplatScene& scene, const Decoder& dec, const PipelineCase& pc) {
    RasterSettings rs;
    rs.tile_size = pc.tile_size;
    const RenderOutput r = blend_forward(scene, pc.camera, rs);
    const DecodedImage d = decode_image(r, pc.camera, dec, pc.background);
    const LossResult l = total_loss(d.rgb, pc.target, pc.semantic ? &d.logits : nullptr,
                                    pc.semantic ? &pc.labels : nullptr, pc.loss);
    const DecodeGradients dg = decode_image_backward(r, pc.camera, dec, pc.background, l.d_image, l.d_logits);
    PipelineGradients out;
    out.loss = l.total;
    out.scene = blend_backward(scene, pc.camera, r, dg.d_feature, dg.d_transmittance, rs);
    out.decoder = dg.params;
    return out;
}

/// A named scalar parameter paired with its analytic gradient.
struct ParamRef {
    std::string group;
    double* value;
    double analytic;
};

inline std::vector<ParamRef> enumerate_params(SplatScene& scene, Decoder& dec, const PipelineGradients& g) {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < scene.size(); ++i) {
        Gaussian3D& p = scene.gaussians[i];
        const Gaussian3D& d = g.scene.params[i];
        for (int k = 0; k < 3; ++k) out.push_back({"position", &p.position[k], d.position[k]});
        for (int k = 0; k < 4; ++k) out.push_back({"rotation", &p.rotation[k], d.rotation[k]});
        for (int k = 0; k < 3; ++k) out.push_back({"log_scale", &p.log_scale[k], d.log_scale[k]});
        out.push_back({"opacity_logit", &p.opacity_logit, d.opacity_logit});
        for (Eigen::Index k = 0; k < p.feature.size(); ++k) out.push_back({"feature", &p.feature[k], d.feature[k]});
    }
    auto add = [&](const char* name, auto& m, const auto& gm) {
        for (Eigen::Index k = 0; k < m.size(); ++k) out.push_back({name, m.data() + k, gm.data()[k]});
    };
    add("mlp.w1", dec.w1, g.decoder.w1);
    add("mlp.b1", dec.b1, g.decoder.b1);
    add("mlp.w2", dec.w2, g.decoder.w2);
    add("mlp.b2", dec.b2, g.decoder.b2);
    return out;
}

/// Scalar reference MLP: explicit loops, no Eigen products.
struct ScalarMlp {
    std::vector<double> hidden, rgb, logits;
};

inline ScalarMlp scalar_mlp(const std::vector<double>& x, const Decoder& dec) {
    ScalarMlp o;
    const int h = Decoder::kHidden;
    o.hidden.assign(h, 0.0);
    for (int j = 0; j < h; ++j) {
        double a = dec.b1[j];
        for (std::size_t i = 0; i < x.size(); ++i) a += dec.w1(j, static_cast<Eigen::Index>(i)) * x[i];
        o.hidden[static_cast<std::size_t>(j)] = a / (1.0 + std::exp(-a));
    }
    const int outs = dec.output_dim();
    std::vector<double> z(static_cast<std::size_t>(outs), 0.0);
    for (int r = 0; r < outs; ++r) {
        double a = dec.b2[r];
        for (int j = 0; j < h; ++j) a += dec.w2(r, j) * o.hidden[static_cast<std::size_t>(j)];
        z[static_cast<std::size_t>(r)] = a;
    }
    for (int c = 0; c < 3; ++c) o.rgb.push_back(1.0 / (1.0 + std::exp(-z[static_cast<std::size_t>(c)])));
    o.logits.assign(z.begin() + 3, z.end());
    return o;
}

}  // namespace featsplat::testing
