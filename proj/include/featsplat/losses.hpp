// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/common.hpp"

#include <optional>
#include <vector>

namespace featsplat {

struct LossConfig {
    double lambda_ssim = 0.2;
    double lambda_sem = 0.001;

    void validate() const;
};

/// Mean absolute difference over all pixels and channels.
double l1_loss(const ImageBuffer& pred, const ImageBuffer& target);
ImageBuffer l1_loss_grad(const ImageBuffer& pred, const ImageBuffer& target);

/// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
/// same-size filtering with half-sample symmetric (reflected) borders,
/// averaged over pixels and channels.
double ssim_metric(const ImageBuffer& a, const ImageBuffer& b);

struct SsimWithGrad {
    double value = 0.0;
    ImageBuffer grad;  // d SSIM / d a
};
SsimWithGrad ssim_with_grad(const ImageBuffer& a, const ImageBuffer& b);

/// (1 - SSIM) / 2.
double dssim_loss(const ImageBuffer& pred, const ImageBuffer& target);

/// Mean over non-ignored pixels of -log softmax(logits)[label].
/// Throws InvalidInput for labels outside [0, C) that are not `ignore_id`.
double ce_loss(const ImageBuffer& logits, const LabelMap& labels, int ignore_id = kIgnoreLabel);

struct CeWithGrad {
    double value = 0.0;
    ImageBuffer grad;  // d CE / d logits
    std::size_t counted = 0;
};
CeWithGrad ce_loss_with_grad(const ImageBuffer& logits, const LabelMap& labels, int ignore_id = kIgnoreLabel);

struct LossResult {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double ce = 0.0;
    ImageBuffer d_image;   // d total / d predicted rgb
    ImageBuffer d_logits;  // d total / d logits; empty without a semantic term
};

/// (1 - lambda_ssim) L1 + lambda_ssim D-SSIM (+ lambda_sem CE when logits and labels are given).
LossResult total_loss(const ImageBuffer& pred, const ImageBuffer& target, const ImageBuffer* logits,
                      const LabelMap* labels, const LossConfig& cfg, int ignore_id = kIgnoreLabel);

/// 10 log10(1 / mse), capped at 100 dB for mse < 1e-10.
double psnr_from_mse(double mse);
double psnr(const ImageBuffer& pred, const ImageBuffer& target);

/// Per-pixel argmax over channels.
LabelMap argmax_labels(const ImageBuffer& scores);

/// Sum_c w_c IoU_c / Sum_c w_c over classes present in prediction or ground
/// truth. Weights default to ground-truth pixel counts. Pixels labelled
/// `ignore_id` in the ground truth are skipped.
double weighted_miou(const LabelMap& pred, const LabelMap& gt, int class_count,
                     const std::vector<double>& support_weights = {}, int ignore_id = kIgnoreLabel);

}  // namespace featsplat
