// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace featsplat {

void LossConfig::validate() const {
    if (!(lambda_ssim >= 0.0 && lambda_ssim <= 1.0)) throw InvalidInput("lambda_ssim must lie in [0, 1]");
    if (!(lambda_sem >= 0.0)) throw InvalidInput("lambda_sem must be non-negative");
}

namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* who) {
    if (!a.same_shape(b))
        throw InvalidInput(std::string(who) + ": shape mismatch (" + std::to_string(a.width) + "x" +
                           std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                           std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                           std::to_string(b.channels) + ")");
    if (a.data.empty()) throw InvalidInput(std::string(who) + ": empty image");
}

constexpr int kWindow = 11;
constexpr int kRadius = kWindow / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& gaussian_window() {
    static const std::array<double, kWindow> w = [] {
        std::array<double, kWindow> k{};
        double sum = 0.0;
        for (int i = 0; i < kWindow; ++i) {
            const double x = i - kRadius;
            k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
            sum += k[i];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return w;
}

// Half-sample symmetric reflection: ... c b a | a b c ... (period 2n).
inline int reflect(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

using Plane = std::vector<double>;

// Separable same-size Gaussian blur of a single-channel w x h plane.
Plane blur(const Plane& in, int w, int h) {
    const auto& k = gaussian_window();
    Plane tmp(in.size()), out(in.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int j = 0; j < kWindow; ++j) s += k[j] * in[static_cast<std::size_t>(y) * w + reflect(x + j - kRadius, w)];
            tmp[static_cast<std::size_t>(y) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int j = 0; j < kWindow; ++j) s += k[j] * tmp[static_cast<std::size_t>(reflect(y + j - kRadius, h)) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = s;
        }
    return out;
}

// Adjoint of blur().
Plane blur_adjoint(const Plane& g, int w, int h) {
    const auto& k = gaussian_window();
    Plane tmp(g.size(), 0.0), out(g.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = g[static_cast<std::size_t>(y) * w + x];
            for (int j = 0; j < kWindow; ++j) tmp[static_cast<std::size_t>(reflect(y + j - kRadius, h)) * w + x] += k[j] * v;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = tmp[static_cast<std::size_t>(y) * w + x];
            for (int j = 0; j < kWindow; ++j) out[static_cast<std::size_t>(y) * w + reflect(x + j - kRadius, w)] += k[j] * v;
        }
    return out;
}

Plane channel_plane(const ImageBuffer& img, int c) {
    Plane p(img.pixel_count());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
    return p;
}

// Mean SSIM over all pixels and channels; fills d(mean SSIM)/da when grad != nullptr.
double ssim_impl(const ImageBuffer& a, const ImageBuffer& b, ImageBuffer* grad) {
    const int w = a.width, h = a.height;
    const std::size_t n = a.pixel_count();
    const double norm = 1.0 / (static_cast<double>(n) * a.channels);
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        const Plane x = channel_plane(a, c), y = channel_plane(b, c);
        Plane xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const Plane mu1 = blur(x, w, h), mu2 = blur(y, w, h);
        const Plane e_xx = blur(xx, w, h), e_yy = blur(yy, w, h), e_xy = blur(xy, w, h);

        Plane g_mu1, g_xx, g_xy;
        if (grad) {
            g_mu1.assign(n, 0.0);
            g_xx.assign(n, 0.0);
            g_xy.assign(n, 0.0);
        }
        double channel_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double s1 = e_xx[i] - mu1[i] * mu1[i];
            const double s2 = e_yy[i] - mu2[i] * mu2[i];
            const double s12 = e_xy[i] - mu1[i] * mu2[i];
            const double a1 = 2.0 * mu1[i] * mu2[i] + kC1;
            const double a2 = 2.0 * s12 + kC2;
            const double b1 = mu1[i] * mu1[i] + mu2[i] * mu2[i] + kC1;
            const double b2 = s1 + s2 + kC2;
            const double s = (a1 * a2) / (b1 * b2);
            channel_sum += s;
            if (grad) {
                const double d_s1 = -s / b2;
                const double d_s12 = 2.0 * a1 / (b1 * b2);
                const double d_mu1 = 2.0 * mu2[i] * a2 / (b1 * b2) - 2.0 * mu1[i] * s / b1;
                // sigma1^2 = E[x^2] - mu1^2, sigma12 = E[xy] - mu1 mu2
                g_mu1[i] = norm * (d_mu1 - 2.0 * mu1[i] * d_s1 - mu2[i] * d_s12);
                g_xx[i] = norm * d_s1;
                g_xy[i] = norm * d_s12;
            }
        }
        total += channel_sum;
        if (grad) {
            const Plane t_mu1 = blur_adjoint(g_mu1, w, h);
            const Plane t_xx = blur_adjoint(g_xx, w, h);
            const Plane t_xy = blur_adjoint(g_xy, w, h);
            for (std::size_t i = 0; i < n; ++i)
                grad->data[i * a.channels + c] = t_mu1[i] + 2.0 * x[i] * t_xx[i] + y[i] * t_xy[i];
        }
    }
    return total * norm;
}

}  // namespace

double l1_loss(const ImageBuffer& pred, const ImageBuffer& target) {
    require_same_shape(pred, target, "l1_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) sum += std::abs(pred.data[i] - target.data[i]);
    return sum / static_cast<double>(pred.data.size());
}

ImageBuffer l1_loss_grad(const ImageBuffer& pred, const ImageBuffer& target) {
    require_same_shape(pred, target, "l1_loss");
    ImageBuffer g(pred.width, pred.height, pred.channels);
    const double inv = 1.0 / static_cast<double>(pred.data.size());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        g.data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    return g;
}

double ssim_metric(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "ssim");
    return ssim_impl(a, b, nullptr);
}

SsimWithGrad ssim_with_grad(const ImageBuffer& a, const ImageBuffer& b) {
    require_same_shape(a, b, "ssim");
    SsimWithGrad r;
    r.grad = ImageBuffer(a.width, a.height, a.channels);
    r.value = ssim_impl(a, b, &r.grad);
    return r;
}

double dssim_loss(const ImageBuffer& pred, const ImageBuffer& target) {
    return 0.5 * (1.0 - ssim_metric(pred, target));
}

namespace {

void check_labels(const ImageBuffer& logits, const LabelMap& labels, int ignore_id) {
    if (logits.width != labels.width || logits.height != labels.height)
        throw InvalidInput("ce_loss: logits and labels differ in size");
    if (logits.channels < 1) throw InvalidInput("ce_loss: logits need at least one class channel");
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const int l = labels.data[i];
        if (l != ignore_id && (l < 0 || l >= logits.channels))
            throw InvalidInput("ce_loss: invalid class id " + std::to_string(l) + " at pixel " + std::to_string(i));
    }
}

}  // namespace

CeWithGrad ce_loss_with_grad(const ImageBuffer& logits, const LabelMap& labels, int ignore_id) {
    check_labels(logits, labels, ignore_id);
    const int classes = logits.channels;
    CeWithGrad r;
    r.grad = ImageBuffer(logits.width, logits.height, classes);
    for (const int l : labels.data) r.counted += l != ignore_id;
    if (r.counted == 0) return r;
    const double inv = 1.0 / static_cast<double>(r.counted);
    double sum = 0.0;
    for (std::size_t p = 0; p < labels.data.size(); ++p) {
        const int l = labels.data[p];
        if (l == ignore_id) continue;
        const double* z = logits.data.data() + p * classes;
        const double mx = *std::max_element(z, z + classes);
        double se = 0.0;
        for (int c = 0; c < classes; ++c) se += std::exp(z[c] - mx);
        const double lse = mx + std::log(se);
        sum += lse - z[l];
        double* g = r.grad.data.data() + p * classes;
        for (int c = 0; c < classes; ++c) g[c] = inv * std::exp(z[c] - lse);
        g[l] -= inv;
    }
    r.value = sum * inv;
    return r;
}

double ce_loss(const ImageBuffer& logits, const LabelMap& labels, int ignore_id) {
    return ce_loss_with_grad(logits, labels, ignore_id).value;
}

LossResult total_loss(const ImageBuffer& pred, const ImageBuffer& target, const ImageBuffer* logits,
                      const LabelMap* labels, const LossConfig& cfg, int ignore_id) {
    cfg.validate();
    require_same_shape(pred, target, "total_loss");
    if ((logits == nullptr) != (labels == nullptr))
        throw InvalidInput("total_loss: semantic logits and labels must be given together");

    LossResult r;
    r.l1 = l1_loss(pred, target);
    const SsimWithGrad ss = ssim_with_grad(pred, target);
    r.dssim = 0.5 * (1.0 - ss.value);
    r.total = (1.0 - cfg.lambda_ssim) * r.l1 + cfg.lambda_ssim * r.dssim;

    r.d_image = l1_loss_grad(pred, target);
    for (std::size_t i = 0; i < r.d_image.data.size(); ++i)
        r.d_image.data[i] = (1.0 - cfg.lambda_ssim) * r.d_image.data[i] - 0.5 * cfg.lambda_ssim * ss.grad.data[i];

    if (logits) {
        CeWithGrad ce = ce_loss_with_grad(*logits, *labels, ignore_id);
        r.ce = ce.value;
        r.total += cfg.lambda_sem * r.ce;
        for (auto& v : ce.grad.data) v *= cfg.lambda_sem;
        r.d_logits = std::move(ce.grad);
    }
    return r;
}

double psnr_from_mse(double mse) {
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double psnr(const ImageBuffer& pred, const ImageBuffer& target) {
    require_same_shape(pred, target, "psnr");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        sum += d * d;
    }
    return psnr_from_mse(sum / static_cast<double>(pred.data.size()));
}

LabelMap argmax_labels(const ImageBuffer& scores) {
    LabelMap out(scores.width, scores.height);
    if (scores.channels == 0) return out;
    for (std::size_t p = 0; p < out.data.size(); ++p) {
        const double* s = scores.data.data() + p * scores.channels;
        out.data[p] = static_cast<int>(std::max_element(s, s + scores.channels) - s);
    }
    return out;
}

double weighted_miou(const LabelMap& pred, const LabelMap& gt, int class_count,
                     const std::vector<double>& support_weights, int ignore_id) {
    if (pred.width != gt.width || pred.height != gt.height) throw InvalidInput("weighted_miou: shape mismatch");
    if (class_count < 1) throw InvalidInput("weighted_miou: class count must be positive");
    if (!support_weights.empty() && static_cast<int>(support_weights.size()) != class_count)
        throw InvalidInput("weighted_miou: one support weight per class required");

    std::vector<double> inter(class_count, 0.0), in_pred(class_count, 0.0), in_gt(class_count, 0.0);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const int g = gt.data[i], p = pred.data[i];
        if (g == ignore_id) continue;
        if (g < 0 || g >= class_count) throw InvalidInput("weighted_miou: ground-truth label out of range");
        in_gt[g] += 1.0;
        if (p >= 0 && p < class_count) {
            in_pred[p] += 1.0;
            if (p == g) inter[g] += 1.0;
        }
    }
    double num = 0.0, den = 0.0;
    bool any_class = false;
    for (int c = 0; c < class_count; ++c) {
        const double uni = in_pred[c] + in_gt[c] - inter[c];
        if (uni == 0.0) continue;
        any_class = true;
        const double w = support_weights.empty() ? in_gt[c] : support_weights[c];
        num += w * inter[c] / uni;
        den += w;
    }
    if (den > 0.0) return num / den;
    return any_class ? 0.0 : 1.0;
}

}  // namespace featsplat
