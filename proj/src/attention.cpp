#include "mvdgw/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "init.hpp"
#include "mvdgw/errors.hpp"

namespace mvdgw {

namespace {

constexpr double kLayerNormEps = 1e-5;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ConfigError(what + " is " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                          std::to_string(cols));
    }
    if (!detail::all_finite(m.values())) throw ConfigError(what + " has non-finite entries");
}

void require_length(const std::vector<double>& v, std::size_t n, const std::string& what) {
    if (v.size() != n) {
        throw ConfigError(what + " has length " + std::to_string(v.size()) + ", expected " +
                          std::to_string(n));
    }
    if (!detail::all_finite(v)) throw ConfigError(what + " has non-finite entries");
}

Matrix layer_norm_rows(const Matrix& z, std::span<const double> gain,
                       std::span<const double> bias) {
    Matrix out(z.rows(), z.cols());
    for (std::size_t p = 0; p < z.rows(); ++p) {
        const auto row = layer_norm(z.row(p), gain, bias);
        std::copy(row.begin(), row.end(), out.row(p).begin());
    }
    return out;
}

}  // namespace

GridExtents TransformerConfig::token_grid() const {
    return {frames / patch.t, height / patch.h, video_width / patch.w};
}

void TransformerConfig::validate() const {
    if (blocks < 1) throw ConfigError("transformer needs at least one block");
    if (heads < 1 || width < 1) throw ConfigError("heads and width must be >= 1");
    if (width % heads != 0) {
        throw ConfigError("width " + std::to_string(width) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (mlp_hidden < 1 || classes < 1) throw ConfigError("mlp_hidden and classes must be >= 1");
    if (patch.t < 1 || patch.h < 1 || patch.w < 1) throw ConfigError("patch extents must be >= 1");
    if (frames % patch.t != 0 || height % patch.h != 0 || video_width % patch.w != 0 ||
        frames == 0 || height == 0 || video_width == 0) {
        throw ConfigError("video extents " + std::to_string(frames) + "x" +
                          std::to_string(height) + "x" + std::to_string(video_width) +
                          " are not divisible by patch extents " + std::to_string(patch.t) +
                          "x" + std::to_string(patch.h) + "x" + std::to_string(patch.w));
    }
}

ModelWeights ModelWeights::init(const TransformerConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = config.width;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    const auto uniform = [&](std::size_t r, std::size_t c) {
        return detail::uniform_matrix(rng, r, c, bound);
    };

    ModelWeights w;
    w.config = config;
    w.patch_projection = uniform(d, config.patch_dim());
    w.patch_bias.assign(d, 0.0);
    w.positional = uniform(config.patch_count(), d);
    for (std::size_t b = 0; b < config.blocks; ++b) {
        BlockWeights block;
        block.ln1_gain.assign(d, 1.0);
        block.ln1_bias.assign(d, 0.0);
        for (std::size_t a = 0; a < config.heads; ++a) {
            HeadWeights head;
            head.query = uniform(config.head_width(), d);
            head.key = uniform(config.head_width(), d);
            head.value = uniform(config.head_width(), d);
            block.heads.push_back(std::move(head));
        }
        block.output = uniform(d, d);
        block.ln2_gain.assign(d, 1.0);
        block.ln2_bias.assign(d, 0.0);
        block.mlp_in = uniform(config.mlp_hidden, d);
        block.mlp_in_bias.assign(config.mlp_hidden, 0.0);
        block.mlp_out = uniform(d, config.mlp_hidden);
        block.mlp_out_bias.assign(d, 0.0);
        w.blocks.push_back(std::move(block));
    }
    w.classifier = uniform(config.classes, d);
    w.classifier_bias.assign(config.classes, 0.0);
    return w;
}

void ModelWeights::validate() const {
    config.validate();
    const std::size_t d = config.width;
    require_shape(patch_projection, d, config.patch_dim(), "patch_projection");
    require_length(patch_bias, d, "patch_bias");
    require_shape(positional, config.patch_count(), d, "positional");
    if (blocks.size() != config.blocks) {
        throw ConfigError("expected " + std::to_string(config.blocks) + " blocks, got " +
                          std::to_string(blocks.size()));
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& block = blocks[b];
        const std::string prefix = "block" + std::to_string(b) + ".";
        require_length(block.ln1_gain, d, prefix + "ln1_gain");
        require_length(block.ln1_bias, d, prefix + "ln1_bias");
        if (block.heads.size() != config.heads) throw ConfigError(prefix + "heads: wrong count");
        for (const auto& head : block.heads) {
            require_shape(head.query, config.head_width(), d, prefix + "query");
            require_shape(head.key, config.head_width(), d, prefix + "key");
            require_shape(head.value, config.head_width(), d, prefix + "value");
        }
        require_shape(block.output, d, d, prefix + "output");
        require_length(block.ln2_gain, d, prefix + "ln2_gain");
        require_length(block.ln2_bias, d, prefix + "ln2_bias");
        require_shape(block.mlp_in, config.mlp_hidden, d, prefix + "mlp_in");
        require_length(block.mlp_in_bias, config.mlp_hidden, prefix + "mlp_in_bias");
        require_shape(block.mlp_out, d, config.mlp_hidden, prefix + "mlp_out");
        require_length(block.mlp_out_bias, d, prefix + "mlp_out_bias");
    }
    require_shape(classifier, config.classes, d, "classifier");
    require_length(classifier_bias, config.classes, "classifier_bias");
}

Matrix patch_embed(const Tensor& video, const ModelWeights& weights) {
    const auto& cfg = weights.config;
    const auto& shape = video.shape();
    if (shape.size() != 4 || shape[3] != TransformerConfig::kChannels) {
        throw ConfigError("video must be a (T, H, W, 3) tensor");
    }
    if (shape[0] != cfg.frames || shape[1] != cfg.height || shape[2] != cfg.video_width) {
        throw ConfigError("video extents " + std::to_string(shape[0]) + "x" +
                          std::to_string(shape[1]) + "x" + std::to_string(shape[2]) +
                          " do not match the configured " + std::to_string(cfg.frames) + "x" +
                          std::to_string(cfg.height) + "x" + std::to_string(cfg.video_width));
    }
    const GridExtents grid = cfg.token_grid();
    const std::size_t H = shape[1];
    const std::size_t W = shape[2];
    const auto data = video.data();

    Matrix patches(grid.size(), cfg.patch_dim());
    for (std::size_t p = 0; p < grid.size(); ++p) {
        const GridIndex g = unflatten_index(p, grid);
        std::size_t k = 0;
        for (std::size_t dt = 0; dt < cfg.patch.t; ++dt)
            for (std::size_t dh = 0; dh < cfg.patch.h; ++dh)
                for (std::size_t dw = 0; dw < cfg.patch.w; ++dw) {
                    const std::size_t t = g.t * cfg.patch.t + dt;
                    const std::size_t h = g.h * cfg.patch.h + dh;
                    const std::size_t w = g.w * cfg.patch.w + dw;
                    const std::size_t base = ((t * H + h) * W + w) * TransformerConfig::kChannels;
                    for (std::size_t c = 0; c < TransformerConfig::kChannels; ++c) {
                        patches(p, k++) = data[base + c];
                    }
                }
    }
    Matrix z = matmul_transposed(patches, weights.patch_projection);
    for (std::size_t p = 0; p < z.rows(); ++p) {
        for (std::size_t j = 0; j < z.cols(); ++j) {
            z(p, j) += weights.patch_bias[j] + weights.positional(p, j);
        }
    }
    return z;
}

std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias) {
    const std::size_t d = v.size();
    if (d < 2) throw ConfigError("layer_norm needs width >= 2");
    if (gain.size() != d || bias.size() != d) throw ConfigError("layer_norm: parameter width");
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i) out[i] = (v[i] - mean) * inv * gain[i] + bias[i];
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

BlockOutput multi_head_self_attention(const Matrix& z, const BlockWeights& block) {
    const std::size_t P = z.rows();
    const std::size_t d = z.cols();
    if (block.output.rows() != d || block.output.cols() != d) {
        throw ConfigError("attention output projection does not match token width");
    }
    const Matrix normed = layer_norm_rows(z, block.ln1_gain, block.ln1_bias);

    Matrix concat(P, d);
    AttentionWeights attention;
    std::size_t offset = 0;
    for (const auto& head : block.heads) {
        const Matrix q = matmul_transposed(normed, head.query);
        const Matrix k = matmul_transposed(normed, head.key);
        const Matrix v = matmul_transposed(normed, head.value);
        const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));

        Matrix alpha = matmul_transposed(q, k);
        for (std::size_t p = 0; p < P; ++p) {
            auto row = alpha.row(p);
            for (double& x : row) x *= scale;
            const auto probs = softmax(row);
            std::copy(probs.begin(), probs.end(), row.begin());
        }
        const Matrix s = matmul(alpha, v);
        for (std::size_t p = 0; p < P; ++p) {
            for (std::size_t c = 0; c < s.cols(); ++c) concat(p, offset + c) = s(p, c);
        }
        offset += s.cols();
        attention.heads.push_back(std::move(alpha));
    }
    if (offset != d) throw ConfigError("head widths do not add up to the token width");

    Matrix out = matmul_transposed(concat, block.output);
    for (std::size_t k = 0; k < out.values().size(); ++k) out.values()[k] += z.values()[k];
    return {std::move(out), std::move(attention)};
}

Matrix mlp_sublayer(const Matrix& z, const BlockWeights& block) {
    const Matrix normed = layer_norm_rows(z, block.ln2_gain, block.ln2_bias);
    Matrix hidden = matmul_transposed(normed, block.mlp_in);
    for (std::size_t p = 0; p < hidden.rows(); ++p) {
        auto row = hidden.row(p);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = gelu(row[j] + block.mlp_in_bias[j]);
    }
    Matrix out = matmul_transposed(hidden, block.mlp_out);
    for (std::size_t p = 0; p < out.rows(); ++p) {
        for (std::size_t j = 0; j < out.cols(); ++j) out(p, j) += block.mlp_out_bias[j] + z(p, j);
    }
    return out;
}

BlockOutput encoder_block(const Matrix& z, const BlockWeights& block) {
    BlockOutput attended = multi_head_self_attention(z, block);
    attended.z = mlp_sublayer(attended.z, block);
    return attended;
}

std::vector<AttentionVolume> extract_attention_volumes(const AttentionWeights& attention,
                                                       GridExtents grid) {
    std::vector<AttentionVolume> volumes;
    volumes.reserve(attention.heads.size());
    for (const Matrix& alpha : attention.heads) {
        if (alpha.rows() != grid.size() || alpha.cols() != grid.size()) {
            throw ConfigError("attention is " + std::to_string(alpha.rows()) + "x" +
                              std::to_string(alpha.cols()) + " but the grid has " +
                              std::to_string(grid.size()) + " points");
        }
        auto mass = alpha.col_sums();
        for (double& m : mass) m /= static_cast<double>(alpha.rows());
        volumes.emplace_back(grid, std::move(mass));
    }
    return volumes;
}

std::vector<double> classify(const Matrix& z, const Matrix& head, std::span<const double> bias) {
    if (head.cols() != z.cols() || head.rows() != bias.size()) {
        throw ConfigError("classifier shape does not match features");
    }
    std::vector<double> pooled(z.cols(), 0.0);
    for (std::size_t p = 0; p < z.rows(); ++p) {
        for (std::size_t j = 0; j < z.cols(); ++j) pooled[j] += z(p, j);
    }
    for (double& x : pooled) x /= static_cast<double>(z.rows());
    auto logits = matvec(head, pooled);
    for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += bias[c];
    return logits;
}

std::vector<double> views_ensemble(const std::vector<std::vector<double>>& scores) {
    if (scores.size() != kEnsembleViews) {
        throw ValidationError("views_ensemble expects " + std::to_string(kEnsembleViews) +
                              " score vectors, got " + std::to_string(scores.size()));
    }
    const std::size_t c = scores.front().size();
    std::vector<double> mean(c, 0.0);
    for (const auto& s : scores) {
        if (s.size() != c) throw ValidationError("views_ensemble: score lengths differ");
        for (std::size_t k = 0; k < c; ++k) mean[k] += s[k];
    }
    for (double& x : mean) x /= static_cast<double>(kEnsembleViews);
    return mean;
}

}  // namespace mvdgw
