// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/trainer.hpp"

#include "featsplat/scene_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <span>

namespace featsplat {

void TrainConfig::validate() const {
    if (iterations < 0) throw InvalidInput("iterations must be non-negative");
    for (const double lr : {lr_mlp, lr_feature, lr_position, lr_position_final, lr_rotation, lr_scale, lr_opacity})
        if (!(lr >= 0.0)) throw InvalidInput("learning rates must be non-negative");
    if (!(adam_eps > 0.0)) throw InvalidInput("adam_eps must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw InvalidInput("adam betas must lie in [0, 1)");
    if (densify_interval < 1 || opacity_reset_interval < 1 || probe_interval < 1)
        throw InvalidInput("intervals must be positive");
    if (feature_dim < 3 || feature_dim > 64) throw InvalidInput("feature dimension must be in [3, 64]");
    loss.validate();
}

GaussianAdam GaussianAdam::for_scene(const SplatScene& scene) {
    const std::size_t n = scene.size();
    GaussianAdam a;
    a.position = AdamState(3 * n);
    a.rotation = AdamState(4 * n);
    a.log_scale = AdamState(3 * n);
    a.opacity = AdamState(n);
    a.feature = AdamState(static_cast<std::size_t>(scene.feature_dim) * n);
    return a;
}

DecoderAdam DecoderAdam::for_decoder(const Decoder& dec) {
    DecoderAdam a;
    a.w1 = AdamState(static_cast<std::size_t>(dec.w1.size()));
    a.b1 = AdamState(static_cast<std::size_t>(dec.b1.size()));
    a.w2 = AdamState(static_cast<std::size_t>(dec.w2.size()));
    a.b2 = AdamState(static_cast<std::size_t>(dec.b2.size()));
    return a;
}

double camera_extent(const Dataset& dataset) {
    const auto idx = dataset.train_indices();
    if (idx.empty()) return 1.0;
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto i : idx) mean += dataset.views[i].camera.center();
    mean /= static_cast<double>(idx.size());
    double radius = 0.0;
    for (const auto i : idx) radius = std::max(radius, (dataset.views[i].camera.center() - mean).norm());
    return 1.1 * (radius > 0.0 ? radius : 1.0);
}

TrainState TrainState::initialize(const Dataset& dataset, const TrainConfig& cfg) {
    cfg.validate();
    TrainState st;
    st.rng.seed(cfg.seed);
    st.scene_extent = camera_extent(dataset);

    std::vector<Eigen::Vector3d> points = dataset.seed_points;
    if (points.empty()) {
        std::uniform_real_distribution<double> u(-0.5 * st.scene_extent, 0.5 * st.scene_extent);
        for (int i = 0; i < cfg.random_init_points; ++i) points.emplace_back(u(st.rng), u(st.rng), u(st.rng));
    }
    st.scene = init_scene(points, cfg.feature_dim, dataset.class_count, cfg.seed);
    st.decoder = make_decoder(cfg.feature_dim, dataset.class_count, cfg.embeddings, st.rng);
    st.gaussian_adam = GaussianAdam::for_scene(st.scene);
    st.decoder_adam = DecoderAdam::for_decoder(st.decoder);
    st.grad_accum.assign(st.scene.size(), 0.0);
    st.grad_count.assign(st.scene.size(), 0);
    return st;
}

namespace {

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::span<const double> as_span(const Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> as_span(const Eigen::VectorXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> as_mut_span(Eigen::MatrixXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> as_mut_span(Eigen::VectorXd& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

// Returns the name of the first Gaussian parameter group holding a non-finite value, or "".
std::string first_nonfinite_gaussian_group(const std::vector<Gaussian3D>& gs, const char* prefix) {
    const char* names[] = {"position", "rotation", "log_scale", "opacity_logit", "feature"};
    for (int group = 0; group < 5; ++group)
        for (const auto& g : gs) {
            bool ok = true;
            switch (group) {
                case 0: ok = g.position.allFinite(); break;
                case 1: ok = g.rotation.allFinite(); break;
                case 2: ok = g.log_scale.allFinite(); break;
                case 3: ok = std::isfinite(g.opacity_logit); break;
                default: ok = g.feature.allFinite(); break;
            }
            if (!ok) return std::string(prefix) + names[group];
        }
    return {};
}

std::string first_nonfinite_decoder(const Decoder& d, const char* prefix) {
    if (!d.w1.allFinite()) return std::string(prefix) + "W1";
    if (!d.b1.allFinite()) return std::string(prefix) + "b1";
    if (!d.w2.allFinite()) return std::string(prefix) + "W2";
    if (!d.b2.allFinite()) return std::string(prefix) + "b2";
    return {};
}

double position_lr(const TrainConfig& cfg, int iteration, double extent) {
    const double r = cfg.iterations > 0 ? std::clamp(double(iteration) / cfg.iterations, 0.0, 1.0) : 0.0;
    if (cfg.lr_position <= 0.0 || cfg.lr_position_final <= 0.0) return cfg.lr_position * extent;
    return extent * std::exp(std::log(cfg.lr_position) * (1.0 - r) + std::log(cfg.lr_position_final) * r);
}

template <typename Filter>
void filter_rows(std::vector<double>& v, std::size_t width, const Filter& keep, std::size_t rows) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < rows; ++i)
        if (keep(i)) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * width), width,
                        v.begin() + static_cast<std::ptrdiff_t>(out * width));
            ++out;
        }
    v.resize(out * width);
}

}  // namespace

DecodedImage render_view(const SplatScene& scene, const Decoder& dec, const Camera& cam,
                         const Eigen::Vector3d& background, const EmbeddingOverrides& overrides, int threads) {
    RasterSettings rs;
    rs.threads = threads;
    const RenderOutput r = blend_forward(scene, cam, rs);
    return decode_image(r, cam, dec, background, overrides, threads);
}

IterationResult train_iteration(TrainState& st, const View& view, const TrainConfig& cfg) {
    const Camera& cam = view.camera;
    RasterSettings rs;
    rs.threads = cfg.threads;

    const RenderOutput render = blend_forward(st.scene, cam, rs);
    const DecodedImage decoded = decode_image(render, cam, st.decoder, cfg.background, {}, cfg.threads);
    const bool semantic = st.decoder.class_count > 0 && view.labels.has_value();
    LossResult loss = total_loss(decoded.rgb, view.image, semantic ? &decoded.logits : nullptr,
                                 semantic ? &*view.labels : nullptr, cfg.loss);

    if (!std::isfinite(loss.total)) {
        std::string culprit = first_nonfinite_gaussian_group(st.scene.gaussians, "gaussian ");
        if (culprit.empty()) culprit = first_nonfinite_decoder(st.decoder, "decoder ");
        if (culprit.empty() && !all_finite(render.feature_map.data)) culprit = "feature_map";
        if (culprit.empty() && !all_finite(render.transmittance_map.data)) culprit = "transmittance_map";
        if (culprit.empty() && !all_finite(decoded.rgb.data)) culprit = "decoded rgb";
        if (culprit.empty() && !all_finite(decoded.logits.data)) culprit = "semantic logits";
        if (culprit.empty() && !all_finite(view.image.data)) culprit = "target image";
        if (culprit.empty()) culprit = "loss";
        throw NonFiniteError(fmt::format("non-finite loss at iteration {} (view {}); first non-finite tensor: {}",
                                         st.iteration + 1, view.name, culprit));
    }

    const DecodeGradients dgrad = decode_image_backward(render, cam, st.decoder, cfg.background, loss.d_image,
                                                        loss.d_logits, {}, cfg.threads);
    const SceneGradients sgrad =
        blend_backward(st.scene, cam, render, dgrad.d_feature, dgrad.d_transmittance, rs);

    std::string bad = first_nonfinite_decoder(dgrad.params, "gradient of decoder ");
    if (bad.empty()) bad = first_nonfinite_gaussian_group(sgrad.params, "gradient of gaussian ");
    if (!bad.empty())
        throw NonFiniteError(fmt::format("non-finite gradient at iteration {}: {}", st.iteration + 1, bad));

    // view-space gradient measured in normalized device units, as the densify threshold expects
    IterationResult result;
    for (std::size_t i = 0; i < st.scene.size(); ++i) {
        if (!sgrad.visible[i]) continue;
        ++result.visible;
        const Eigen::Vector2d ndc(sgrad.mean2d[i].x() * 0.5 * cam.width, sgrad.mean2d[i].y() * 0.5 * cam.height);
        st.grad_accum[i] += ndc.norm();
        st.grad_count[i] += 1;
    }

    const AdamHyper base{0.0, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
    auto hyper = [&](double lr) {
        AdamHyper h = base;
        h.lr = lr;
        return h;
    };

    DecoderAdam& da = st.decoder_adam;
    adam_step(as_mut_span(st.decoder.w1), as_span(dgrad.params.w1), da.w1, hyper(cfg.lr_mlp));
    adam_step(as_mut_span(st.decoder.b1), as_span(dgrad.params.b1), da.b1, hyper(cfg.lr_mlp));
    adam_step(as_mut_span(st.decoder.w2), as_span(dgrad.params.w2), da.w2, hyper(cfg.lr_mlp));
    adam_step(as_mut_span(st.decoder.b2), as_span(dgrad.params.b2), da.b2, hyper(cfg.lr_mlp));

    GaussianAdam& ga = st.gaussian_adam;
    const std::int64_t t = ++ga.step;
    const AdamHyper h_pos = hyper(position_lr(cfg, st.iteration, st.scene_extent));
    const AdamHyper h_rot = hyper(cfg.lr_rotation), h_scale = hyper(cfg.lr_scale), h_opa = hyper(cfg.lr_opacity),
                    h_feat = hyper(cfg.lr_feature);
    const std::size_t dim = static_cast<std::size_t>(st.scene.feature_dim);
    auto rows = [](AdamState& s, std::size_t i, std::size_t w) {
        return std::pair{std::span<double>(s.m).subspan(i * w, w), std::span<double>(s.v).subspan(i * w, w)};
    };
    for (std::size_t i = 0; i < st.scene.size(); ++i) {
        if (!sgrad.visible[i]) continue;
        Gaussian3D& g = st.scene.gaussians[i];
        const Gaussian3D& d = sgrad.params[i];
        auto [pm, pv] = rows(ga.position, i, 3);
        adam_update({g.position.data(), 3}, {d.position.data(), 3}, pm, pv, t, h_pos);
        auto [rm, rv] = rows(ga.rotation, i, 4);
        adam_update({g.rotation.data(), 4}, {d.rotation.data(), 4}, rm, rv, t, h_rot);
        auto [sm, sv] = rows(ga.log_scale, i, 3);
        adam_update({g.log_scale.data(), 3}, {d.log_scale.data(), 3}, sm, sv, t, h_scale);
        auto [om, ov] = rows(ga.opacity, i, 1);
        adam_update({&g.opacity_logit, 1}, {&d.opacity_logit, 1}, om, ov, t, h_opa);
        auto [fm, fv] = rows(ga.feature, i, dim);
        adam_update({g.feature.data(), dim}, {d.feature.data(), dim}, fm, fv, t, h_feat);
    }

    ++st.iteration;
    result.loss = loss.total;
    result.parts = std::move(loss);
    return result;
}

void densify_and_prune(TrainState& st, const TrainConfig& cfg) {
    const std::size_t n = st.scene.size();
    const std::size_t dim = static_cast<std::size_t>(st.scene.feature_dim);
    GaussianAdam& ga = st.gaussian_adam;
    if (ga.rows() != n || st.grad_accum.size() != n || st.grad_count.size() != n)
        throw ContractViolation("densify_and_prune: optimizer or accumulator state out of sync with the scene");

    std::vector<Gaussian3D> added;
    std::vector<char> keep(n, 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double small_scale = cfg.percent_dense * st.scene_extent;
    for (std::size_t i = 0; i < n; ++i) {
        const double mean_grad = st.grad_count[i] > 0 ? st.grad_accum[i] / st.grad_count[i] : 0.0;
        if (!(mean_grad > cfg.densify_grad_threshold)) continue;
        const Gaussian3D& g = st.scene.gaussians[i];
        const Eigen::Vector3d scale = g.scale();
        if (scale.maxCoeff() <= small_scale) {
            added.push_back(g);
        } else {
            const Eigen::Matrix3d rot = rotation_matrix(g.rotation);
            for (int k = 0; k < 2; ++k) {
                Gaussian3D child = g;
                const Eigen::Vector3d offset(normal(st.rng) * scale.x(), normal(st.rng) * scale.y(),
                                             normal(st.rng) * scale.z());
                child.position = g.position + rot * offset;
                child.log_scale = (scale / 1.6).array().log();
                added.push_back(std::move(child));
            }
            keep[i] = 0;
        }
    }

    std::vector<Gaussian3D> candidates;
    candidates.reserve(n + added.size());
    std::vector<char> survive;
    for (std::size_t i = 0; i < n; ++i)
        if (keep[i]) candidates.push_back(st.scene.gaussians[i]);
    for (auto& g : added) candidates.push_back(std::move(g));
    for (const auto& g : candidates) survive.push_back(g.opacity() >= cfg.prune_opacity_threshold);

    if (std::none_of(survive.begin(), survive.end(), [](char c) { return c != 0; })) {
        const auto best = std::max_element(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
            return a.opacity_logit < b.opacity_logit;
        });
        survive[static_cast<std::size_t>(best - candidates.begin())] = 1;
        std::clog << "warning: pruning would remove every Gaussian; keeping the most opaque one\n";
    }

    // moments: existing rows filtered by keep, new rows zero, then filtered by survive
    auto rebuild = [&](AdamState& s, std::size_t width) {
        filter_rows(s.m, width, [&](std::size_t i) { return keep[i] != 0; }, n);
        filter_rows(s.v, width, [&](std::size_t i) { return keep[i] != 0; }, n);
        s.m.resize(candidates.size() * width, 0.0);
        s.v.resize(candidates.size() * width, 0.0);
        filter_rows(s.m, width, [&](std::size_t i) { return survive[i] != 0; }, candidates.size());
        filter_rows(s.v, width, [&](std::size_t i) { return survive[i] != 0; }, candidates.size());
    };
    rebuild(ga.position, 3);
    rebuild(ga.rotation, 4);
    rebuild(ga.log_scale, 3);
    rebuild(ga.opacity, 1);
    rebuild(ga.feature, dim);

    st.scene.gaussians.clear();
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (survive[i]) st.scene.gaussians.push_back(std::move(candidates[i]));
    st.grad_accum.assign(st.scene.size(), 0.0);
    st.grad_count.assign(st.scene.size(), 0);
}

void reset_opacity(TrainState& st) {
    const double cap = logit(0.01);
    for (auto& g : st.scene.gaussians) g.opacity_logit = std::min(g.opacity_logit, cap);
    std::fill(st.gaussian_adam.opacity.m.begin(), st.gaussian_adam.opacity.m.end(), 0.0);
    std::fill(st.gaussian_adam.opacity.v.begin(), st.gaussian_adam.opacity.v.end(), 0.0);
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, std::ostream* log_stream) {
    cfg.validate();
    const auto train_idx = dataset.train_indices();
    if (train_idx.empty()) throw InvalidInput("train: dataset has no training views");
    const auto test_idx = dataset.test_indices();
    const View& probe = dataset.views[test_idx.empty() ? train_idx.front() : test_idx.front()];

    TrainState st = TrainState::initialize(dataset, cfg);
    std::mt19937_64 order_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
    auto checkpoint = [&](const std::string& name) {
        if (!cfg.checkpoint_dir.empty()) save_scene(st.scene, st.decoder, cfg.checkpoint_dir / name);
    };

    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(cfg.iterations));
    double probe_psnr = 0.0;
    for (int it = 1; it <= cfg.iterations; ++it) {
        if (cursor == order.size()) {
            order = train_idx;
            std::shuffle(order.begin(), order.end(), order_rng);
            cursor = 0;
        }
        const IterationResult r = train_iteration(st, dataset.views[order[cursor++]], cfg);

        if (cfg.densify && it < cfg.densify_until) {
            if (it > cfg.densify_from && it % cfg.densify_interval == 0) densify_and_prune(st, cfg);
            if (it % cfg.opacity_reset_interval == 0) reset_opacity(st);
        }

        if ((it - 1) % cfg.probe_interval == 0 || it == cfg.iterations)
            probe_psnr = psnr(render_view(st.scene, st.decoder, probe.camera, cfg.background, {}, cfg.threads).rgb,
                              probe.image);

        const LogEntry entry{it, r.loss, probe_psnr, st.scene.size()};
        result.log.push_back(entry);
        if (log_stream)
            *log_stream << fmt::format("{}\t{:.8g}\t{:.4f}\t{}\n", entry.iteration, entry.loss, entry.psnr,
                                       entry.n_gaussians);
        if (cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0)
            checkpoint(fmt::format("checkpoint_{:06d}.fspl", it));
    }
    checkpoint("final.fspl");
    result.scene = std::move(st.scene);
    result.decoder = std::move(st.decoder);
    return result;
}

EvalReport evaluate(const SplatScene& scene, const Decoder& dec, const Dataset& dataset,
                    const Eigen::Vector3d& background, int threads) {
    std::vector<std::size_t> idx = dataset.test_indices();
    if (idx.empty()) {
        idx.resize(dataset.views.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    EvalReport report;
    if (idx.empty()) return report;

    (void)render_view(scene, dec, dataset.views[idx.front()].camera, background, {}, threads);  // warm-up

    double miou_sum = 0.0;
    int miou_n = 0;
    std::vector<double> times;
    for (const auto i : idx) {
        const View& v = dataset.views[i];
        const auto t0 = std::chrono::steady_clock::now();
        const DecodedImage img = render_view(scene, dec, v.camera, background, {}, threads);
        const auto t1 = std::chrono::steady_clock::now();
        ViewMetrics m;
        m.name = v.name;
        m.seconds = std::chrono::duration<double>(t1 - t0).count();
        m.psnr = psnr(img.rgb, v.image);
        m.ssim = ssim_metric(img.rgb, v.image);
        if (dec.class_count > 0 && v.labels) {
            m.miou = weighted_miou(argmax_labels(img.probs), *v.labels, dec.class_count);
            miou_sum += *m.miou;
            ++miou_n;
        }
        times.push_back(m.seconds);
        report.mean_psnr += m.psnr;
        report.mean_ssim += m.ssim;
        report.views.push_back(std::move(m));
    }
    report.mean_psnr /= static_cast<double>(idx.size());
    report.mean_ssim /= static_cast<double>(idx.size());
    if (miou_n > 0) report.mean_miou = miou_sum / miou_n;
    std::sort(times.begin(), times.end());
    const double median = times.size() % 2 ? times[times.size() / 2]
                                           : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    report.fps = median > 0.0 ? 1.0 / median : 0.0;
    return report;
}

}  // namespace featsplat
