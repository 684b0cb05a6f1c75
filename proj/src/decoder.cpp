// Copyright Contributors to the featsplat project
// SPDX-License-Identifier: Apache-2.0

#include "featsplat/decoder.hpp"

#include "featsplat/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace featsplat {

void EmbeddingOverrides::check_against(const EmbeddingConfig& config) const {
    if (campos && !config.use_campos) throw InvalidInput("campos override given but the campos embedding is disabled");
    if (pixel && !config.use_pixel) throw InvalidInput("pixel override given but the pixel embedding is disabled");
    if (camrot && !config.use_camrot) throw InvalidInput("camrot override given but the camrot embedding is disabled");
}

Decoder Decoder::zeros(int feature_dim, int class_count, const EmbeddingConfig& config) {
    Decoder d;
    d.config = config;
    d.feature_dim = feature_dim;
    d.class_count = class_count;
    d.w1 = Eigen::MatrixXd::Zero(kHidden, feature_dim + config.dim());
    d.b1 = Eigen::VectorXd::Zero(kHidden);
    d.w2 = Eigen::MatrixXd::Zero(3 + class_count, kHidden);
    d.b2 = Eigen::VectorXd::Zero(3 + class_count);
    return d;
}

void Decoder::validate() const {
    if (feature_dim < 1 || class_count < 0) throw InvalidInput("decoder dimensions are invalid");
    if (w1.rows() != kHidden || w1.cols() != input_dim() || b1.size() != kHidden || w2.rows() != output_dim() ||
        w2.cols() != kHidden || b2.size() != output_dim())
        throw ContractViolation("decoder weight shapes do not match its dimensions");
}

Decoder make_decoder(int feature_dim, int class_count, const EmbeddingConfig& config, std::mt19937_64& rng) {
    Decoder d = Decoder::zeros(feature_dim, class_count, config);
    auto fill = [&rng](Eigen::MatrixXd& m, int fan_in) {
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = u(rng);
    };
    Eigen::MatrixXd b1(d.b1.size(), 1), b2(d.b2.size(), 1);
    fill(d.w1, d.input_dim());
    fill(b1, d.input_dim());
    fill(d.w2, Decoder::kHidden);
    fill(b2, Decoder::kHidden);
    d.b1 = b1.col(0);
    d.b2 = b2.col(0);
    return d;
}

Eigen::Vector2d pixel_embedding(int u, int v, const Camera& cam) {
    if (u < 0 || u >= cam.width || v < 0 || v >= cam.height)
        throw ContractViolation("pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") outside " +
                                std::to_string(cam.width) + "x" + std::to_string(cam.height) + " image");
    return {2.0 * (u + 0.5) / cam.width - 1.0, 2.0 * (v + 0.5) / cam.height - 1.0};
}

namespace {

inline double silu(double z) { return z * sigmoid(z); }
inline double silu_grad(double z) {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
}

// Embedding values shared by every pixel of one camera (pixel embedding excluded).
struct FixedEmbeddings {
    Eigen::Vector3d campos;
    Eigen::Vector3d camrot;
};

FixedEmbeddings fixed_embeddings(const Camera& cam, const EmbeddingOverrides& ov) {
    return {ov.campos ? *ov.campos : cam.center(), ov.camrot ? *ov.camrot : cam.euler_xyz()};
}

// Writes the embedding tail of one input column starting at row D.
template <typename Col>
void write_embeddings(Col&& col, int feature_dim, const EmbeddingConfig& config, const FixedEmbeddings& fixed,
                      const Eigen::Vector2d& pix) {
    Eigen::Index r = feature_dim;
    if (config.use_campos) {
        col.template segment<3>(r) = fixed.campos;
        r += 3;
    }
    if (config.use_pixel) {
        col.template segment<2>(r) = pix;
        r += 2;
    }
    if (config.use_camrot) col.template segment<3>(r) = fixed.camrot;
}

constexpr std::size_t kDecodeBlock = 256;

// Input columns for pixels [first, first + count) of the image, row-major pixel order.
Eigen::MatrixXd assemble_block(const RenderOutput& render, const Camera& cam, const Decoder& dec,
                               const FixedEmbeddings& fixed, const EmbeddingOverrides& ov, std::size_t first,
                               std::size_t count) {
    const int dim = dec.feature_dim;
    Eigen::MatrixXd x(dec.input_dim(), static_cast<Eigen::Index>(count));
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t p = first + k;
        const int u = static_cast<int>(p % cam.width), v = static_cast<int>(p / cam.width);
        const double* f = render.feature_map.data.data() + p * dim;
        auto col = x.col(static_cast<Eigen::Index>(k));
        for (int d = 0; d < dim; ++d) col[d] = f[d];
        const Eigen::Vector2d pix = ov.pixel ? *ov.pixel : pixel_embedding(u, v, cam);
        write_embeddings(col, dim, dec.config, fixed, pix);
    }
    return x;
}

void check_decode_inputs(const RenderOutput& render, const Camera& cam, const Decoder& dec,
                         const EmbeddingOverrides& ov) {
    dec.validate();
    ov.check_against(dec.config);
    if (render.feature_map.channels != dec.feature_dim)
        throw ContractViolation("decode: feature map has " + std::to_string(render.feature_map.channels) +
                                " channels, decoder expects " + std::to_string(dec.feature_dim));
    if (render.feature_map.width != cam.width || render.feature_map.height != cam.height)
        throw ContractViolation("decode: feature map size does not match camera");
}

}  // namespace

Eigen::VectorXd assemble_input(std::span<const double> feature, const Camera& cam, int u, int v,
                               const EmbeddingConfig& config, const EmbeddingOverrides& overrides) {
    overrides.check_against(config);
    const int dim = static_cast<int>(feature.size());
    Eigen::VectorXd x(dim + config.dim());
    for (int d = 0; d < dim; ++d) x[d] = feature[static_cast<std::size_t>(d)];
    const Eigen::Vector2d pix = overrides.pixel ? *overrides.pixel : pixel_embedding(u, v, cam);
    write_embeddings(x, dim, config, fixed_embeddings(cam, overrides), pix);
    return x;
}

MlpOutput mlp_forward(const Eigen::VectorXd& x, const Decoder& dec) {
    dec.validate();
    if (x.size() != dec.input_dim())
        throw ContractViolation("mlp_forward: input has " + std::to_string(x.size()) + " entries, decoder expects " +
                                std::to_string(dec.input_dim()));
    const Eigen::VectorXd h = (dec.w1 * x + dec.b1).unaryExpr([](double z) { return silu(z); });
    const Eigen::VectorXd y = dec.w2 * h + dec.b2;
    MlpOutput out;
    for (int c = 0; c < 3; ++c) out.rgb[c] = sigmoid(y[c]);
    out.logits = y.tail(dec.class_count);
    out.probs.resize(dec.class_count);
    if (dec.class_count > 0) {
        const double mx = out.logits.maxCoeff();
        out.probs = (out.logits.array() - mx).exp();
        out.probs /= out.probs.sum();
    }
    return out;
}

MlpGradients mlp_backward(const Eigen::VectorXd& x, const Decoder& dec, const Eigen::Vector3d& dL_drgb,
                          const Eigen::VectorXd& dL_dlogits) {
    dec.validate();
    if (x.size() != dec.input_dim()) throw ContractViolation("mlp_backward: input dimension mismatch");
    if (dec.class_count > 0 && dL_dlogits.size() != dec.class_count)
        throw ContractViolation("mlp_backward: logit gradient dimension mismatch");

    const Eigen::VectorXd z1 = dec.w1 * x + dec.b1;
    const Eigen::VectorXd h = z1.unaryExpr([](double z) { return silu(z); });
    const Eigen::VectorXd y = dec.w2 * h + dec.b2;

    Eigen::VectorXd dy = Eigen::VectorXd::Zero(dec.output_dim());
    for (int c = 0; c < 3; ++c) {
        const double s = sigmoid(y[c]);
        dy[c] = dL_drgb[c] * s * (1.0 - s);
    }
    if (dec.class_count > 0) dy.tail(dec.class_count) = dL_dlogits;

    MlpGradients g;
    g.params = dec.zeros_like();
    g.params.w2 = dy * h.transpose();
    g.params.b2 = dy;
    const Eigen::VectorXd dz1 = (dec.w2.transpose() * dy).cwiseProduct(z1.unaryExpr([](double z) { return silu_grad(z); }));
    g.params.w1 = dz1 * x.transpose();
    g.params.b1 = dz1;
    g.dx = dec.w1.transpose() * dz1;
    return g;
}

DecodedImage decode_image(const RenderOutput& render, const Camera& cam, const Decoder& dec,
                          const Eigen::Vector3d& background, const EmbeddingOverrides& overrides, int threads) {
    check_decode_inputs(render, cam, dec, overrides);
    const FixedEmbeddings fixed = fixed_embeddings(cam, overrides);
    const int classes = dec.class_count;

    DecodedImage out;
    out.rgb = ImageBuffer(cam.width, cam.height, 3);
    out.probs = ImageBuffer(cam.width, cam.height, classes);
    out.logits = ImageBuffer(cam.width, cam.height, classes);

    const std::size_t n_pixels = render.feature_map.pixel_count();
    const std::size_t n_blocks = (n_pixels + kDecodeBlock - 1) / kDecodeBlock;
    parallel_chunks(n_blocks, resolve_threads(threads), [&](std::size_t b0, std::size_t b1, std::size_t) {
        for (std::size_t blk = b0; blk < b1; ++blk) {
            const std::size_t first = blk * kDecodeBlock;
            const std::size_t count = std::min(kDecodeBlock, n_pixels - first);
            const Eigen::MatrixXd x = assemble_block(render, cam, dec, fixed, overrides, first, count);
            Eigen::MatrixXd h = (dec.w1 * x).colwise() + dec.b1;
            h = h.unaryExpr([](double z) { return silu(z); });
            const Eigen::MatrixXd y = (dec.w2 * h).colwise() + dec.b2;
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t p = first + k;
                const auto col = y.col(static_cast<Eigen::Index>(k));
                const double t = render.transmittance_map.data[p];
                for (int c = 0; c < 3; ++c)
                    out.rgb.data[p * 3 + c] = sigmoid(col[c]) * (1.0 - t) + background[c] * t;
                if (classes > 0) {
                    double* logit = out.logits.data.data() + p * classes;
                    double* prob = out.probs.data.data() + p * classes;
                    double mx = col[3];
                    for (int c = 0; c < classes; ++c) mx = std::max(mx, col[3 + c]);
                    double sum = 0.0;
                    for (int c = 0; c < classes; ++c) {
                        logit[c] = col[3 + c];
                        prob[c] = std::exp(col[3 + c] - mx);
                        sum += prob[c];
                    }
                    for (int c = 0; c < classes; ++c) prob[c] /= sum;
                }
            }
        }
    });
    return out;
}

DecodeGradients decode_image_backward(const RenderOutput& render, const Camera& cam, const Decoder& dec,
                                      const Eigen::Vector3d& background, const ImageBuffer& dL_drgb,
                                      const ImageBuffer& dL_dlogits, const EmbeddingOverrides& overrides,
                                      int threads) {
    check_decode_inputs(render, cam, dec, overrides);
    if (dL_drgb.width != cam.width || dL_drgb.height != cam.height || dL_drgb.channels != 3)
        throw ContractViolation("decode backward: rgb gradient shape mismatch");
    const int classes = dec.class_count;
    const bool has_sem = classes > 0 && !dL_dlogits.data.empty();
    if (has_sem && (dL_dlogits.width != cam.width || dL_dlogits.height != cam.height || dL_dlogits.channels != classes))
        throw ContractViolation("decode backward: logit gradient shape mismatch");

    const FixedEmbeddings fixed = fixed_embeddings(cam, overrides);
    const int dim = dec.feature_dim;
    const std::size_t n_pixels = render.feature_map.pixel_count();
    const std::size_t n_blocks = (n_pixels + kDecodeBlock - 1) / kDecodeBlock;

    DecodeGradients g;
    g.d_feature = ImageBuffer(cam.width, cam.height, dim);
    g.d_transmittance = ImageBuffer(cam.width, cam.height, 1);

    std::vector<Decoder> block_grads(n_blocks);
    parallel_chunks(n_blocks, resolve_threads(threads), [&](std::size_t b0, std::size_t b1, std::size_t) {
        for (std::size_t blk = b0; blk < b1; ++blk) {
            const std::size_t first = blk * kDecodeBlock;
            const std::size_t count = std::min(kDecodeBlock, n_pixels - first);
            const auto n = static_cast<Eigen::Index>(count);
            const Eigen::MatrixXd x = assemble_block(render, cam, dec, fixed, overrides, first, count);
            const Eigen::MatrixXd z1 = (dec.w1 * x).colwise() + dec.b1;
            const Eigen::MatrixXd s1 = z1.unaryExpr([](double z) { return sigmoid(z); });
            const Eigen::MatrixXd h = z1.cwiseProduct(s1);
            const Eigen::MatrixXd y = (dec.w2 * h).colwise() + dec.b2;

            Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(dec.output_dim(), n);
            for (Eigen::Index k = 0; k < n; ++k) {
                const std::size_t p = first + static_cast<std::size_t>(k);
                const double t = render.transmittance_map.data[p];
                double d_t = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const double s = sigmoid(y(c, k));
                    const double up = dL_drgb.data[p * 3 + c];
                    dy(c, k) = up * (1.0 - t) * s * (1.0 - s);
                    d_t += up * (background[c] - s);
                }
                g.d_transmittance.data[p] = d_t;
                if (has_sem)
                    for (int c = 0; c < classes; ++c) dy(3 + c, k) = dL_dlogits.data[p * classes + c];
            }

            Decoder& pg = block_grads[blk];
            pg = dec.zeros_like();
            pg.w2.noalias() = dy * h.transpose();
            pg.b2 = dy.rowwise().sum();
            const Eigen::MatrixXd dz1 = (dec.w2.transpose() * dy)
                                            .cwiseProduct((s1.array() * (1.0 + z1.array() * (1.0 - s1.array()))).matrix());
            pg.w1.noalias() = dz1 * x.transpose();
            pg.b1 = dz1.rowwise().sum();
            const Eigen::MatrixXd dx = dec.w1.leftCols(dim).transpose() * dz1;
            for (Eigen::Index k = 0; k < n; ++k) {
                const std::size_t p = first + static_cast<std::size_t>(k);
                for (int d = 0; d < dim; ++d) g.d_feature.data[p * dim + d] = dx(d, k);
            }
        }
    });

    g.params = dec.zeros_like();
    for (const Decoder& pg : block_grads) {
        g.params.w1 += pg.w1;
        g.params.b1 += pg.b1;
        g.params.w2 += pg.w2;
        g.params.b2 += pg.b2;
    }
    return g;
}

}  // namespace featsplat
