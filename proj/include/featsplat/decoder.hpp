// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "featsplat/camera.hpp"
#include "featsplat/common.hpp"
#include "featsplat/rasterizer.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <random>
#include <span>

namespace featsplat {

/// Which camera/pixel embeddings are concatenated after the blended feature.
struct EmbeddingConfig {
    bool use_pixel = true;   // e_p, 2 dims
    bool use_campos = true;  // camera center, 3 dims
    bool use_camrot = false; // camera Euler angles, 3 dims

    int dim() const { return 2 * use_pixel + 3 * use_campos + 3 * use_camrot; }

    std::uint8_t flags() const {
        return static_cast<std::uint8_t>((use_pixel ? 1 : 0) | (use_campos ? 2 : 0) | (use_camrot ? 4 : 0));
    }
    static EmbeddingConfig from_flags(std::uint8_t f) { return {(f & 1) != 0, (f & 2) != 0, (f & 4) != 0}; }
    static EmbeddingConfig none() { return {false, false, false}; }

    bool operator==(const EmbeddingConfig&) const = default;
};

/// Inference-time replacements for embedding inputs. Each override replaces
/// the embedding for every pixel with the given constant.
struct EmbeddingOverrides {
    std::optional<Eigen::Vector3d> campos;
    std::optional<Eigen::Vector2d> pixel;
    std::optional<Eigen::Vector3d> camrot;

    bool empty() const { return !campos && !pixel && !camrot; }
    /// Throws InvalidInput when an override targets an embedding that `config` disables.
    void check_against(const EmbeddingConfig& config) const;
};

/// Two-layer MLP: 64 SiLU hidden units, sigmoid RGB head and an optional
/// C-way softmax semantic head. The same type holds parameter gradients.
struct Decoder {
    static constexpr int kHidden = 64;

    EmbeddingConfig config;
    int feature_dim = 0;
    int class_count = 0;
    Eigen::MatrixXd w1;  // kHidden x (D + E)
    Eigen::VectorXd b1;  // kHidden
    Eigen::MatrixXd w2;  // (3 + C) x kHidden
    Eigen::VectorXd b2;  // 3 + C

    int input_dim() const { return feature_dim + config.dim(); }
    int output_dim() const { return 3 + class_count; }

    /// All parameters zero, shapes set from (D, C, config).
    static Decoder zeros(int feature_dim, int class_count, const EmbeddingConfig& config);
    Decoder zeros_like() const { return zeros(feature_dim, class_count, config); }

    void validate() const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization per layer.
Decoder make_decoder(int feature_dim, int class_count, const EmbeddingConfig& config, std::mt19937_64& rng);

/// (2(u+0.5)/W - 1, 2(v+0.5)/H - 1). Throws ContractViolation for pixels outside the image.
Eigen::Vector2d pixel_embedding(int u, int v, const Camera& cam);

/// f_p, then camera position, pixel embedding and camera rotation for the
/// enabled embeddings, each replaced by its override when present.
Eigen::VectorXd assemble_input(std::span<const double> feature, const Camera& cam, int u, int v,
                               const EmbeddingConfig& config, const EmbeddingOverrides& overrides = {});

struct MlpOutput {
    Eigen::Vector3d rgb;
    Eigen::VectorXd logits;  // C
    Eigen::VectorXd probs;   // C, softmax of logits
};

MlpOutput mlp_forward(const Eigen::VectorXd& x, const Decoder& dec);

struct MlpGradients {
    Eigen::VectorXd dx;
    Decoder params;
};

/// Reverse mode through mlp_forward. `dL_drgb` is taken w.r.t. the sigmoid
/// outputs, `dL_dlogits` w.r.t. the pre-softmax semantic logits (may be empty when C = 0).
MlpGradients mlp_backward(const Eigen::VectorXd& x, const Decoder& dec, const Eigen::Vector3d& dL_drgb,
                          const Eigen::VectorXd& dL_dlogits);

struct DecodedImage {
    ImageBuffer rgb;     // H x W x 3, background composited
    ImageBuffer probs;   // H x W x C
    ImageBuffer logits;  // H x W x C
};

/// Decodes every pixel of a blended feature map. Final colour is
/// rgb * (1 - T) + background * T with T the residual transmittance.
DecodedImage decode_image(const RenderOutput& render, const Camera& cam, const Decoder& dec,
                          const Eigen::Vector3d& background, const EmbeddingOverrides& overrides = {},
                          int threads = 1);

struct DecodeGradients {
    ImageBuffer d_feature;        // H x W x D
    ImageBuffer d_transmittance;  // H x W x 1
    Decoder params;
};

/// Reverse mode through decode_image. `dL_dlogits` may be an empty buffer.
DecodeGradients decode_image_backward(const RenderOutput& render, const Camera& cam, const Decoder& dec,
                                      const Eigen::Vector3d& background, const ImageBuffer& dL_drgb,
                                      const ImageBuffer& dL_dlogits, const EmbeddingOverrides& overrides = {},
                                      int threads = 1);

}  // namespace featsplat
