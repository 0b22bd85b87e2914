#pragma once

// Toy-scale pre-norm transformer encoder over space-time video patches.
//
//   z'  = MSA(LN(z)) + z
//   z'' = MLP(LN(z')) + z'
//
// Attention is global over all P patches (no shifted windows).

#include <cstdint>
#include <span>
#include <vector>

#include "mvdgw/tensor.hpp"

namespace mvdgw {

struct PatchExtents {
    std::size_t t = 1;
    std::size_t h = 2;
    std::size_t w = 2;
};

struct TransformerConfig {
    std::size_t blocks = 2;
    std::size_t heads = 4;
    std::size_t width = 32;
    std::size_t mlp_hidden = 64;
    PatchExtents patch;
    // Input video extents (frames, height, width); three colour channels.
    std::size_t frames = 4;
    std::size_t height = 8;
    std::size_t video_width = 8;
    std::size_t classes = 8;

    static constexpr std::size_t kChannels = 3;

    std::size_t head_width() const { return width / heads; }
    std::size_t patch_dim() const { return patch.t * patch.h * patch.w * kChannels; }
    /// Token grid (frames / p_t, height / p_h, width / p_w).
    GridExtents token_grid() const;
    std::size_t patch_count() const { return token_grid().size(); }

    /// Throws ConfigError on indivisible extents or width % heads != 0.
    void validate() const;
};

struct HeadWeights {
    Matrix query;  // head_width x width
    Matrix key;
    Matrix value;
};

struct BlockWeights {
    std::vector<double> ln1_gain, ln1_bias;
    std::vector<HeadWeights> heads;
    Matrix output;  // width x width
    std::vector<double> ln2_gain, ln2_bias;
    Matrix mlp_in;  // mlp_hidden x width
    std::vector<double> mlp_in_bias;
    Matrix mlp_out;  // width x mlp_hidden
    std::vector<double> mlp_out_bias;
};

struct ModelWeights {
    TransformerConfig config;
    Matrix patch_projection;  // width x patch_dim
    std::vector<double> patch_bias;
    Matrix positional;  // P x width
    std::vector<BlockWeights> blocks;
    Matrix classifier;  // classes x width
    std::vector<double> classifier_bias;

    /// Seeded uniform weights in [-1/sqrt(width), 1/sqrt(width)]; layer-norm
    /// gains start at 1 and all biases at 0.
    static ModelWeights init(const TransformerConfig& config, std::uint64_t seed);

    /// Shape and finiteness checks against `config`.
    void validate() const;
};

/// Per-head P x P row-stochastic attention matrices of one block.
struct AttentionWeights {
    std::vector<Matrix> heads;
};

/// Non-overlapping patches of a (T, H, W, 3) video, flattened in
/// (dt, dh, dw, channel) order, projected to width and offset by the
/// positional table. Rows follow the token grid in row-major order.
Matrix patch_embed(const Tensor& video, const ModelWeights& weights);

/// (v - mean) / sqrt(var + 1e-5) * gain + bias, population variance.
std::vector<double> layer_norm(std::span<const double> v, std::span<const double> gain,
                               std::span<const double> bias);

struct BlockOutput {
    Matrix z;
    AttentionWeights attention;
};

/// z + W_O concat_a(softmax(q k^T / sqrt(head_width)) v) with q, k, v taken
/// from LN(z). Returns the updated tokens and the attention matrices.
BlockOutput multi_head_self_attention(const Matrix& z, const BlockWeights& block);

/// z + MLP(LN(z)) with a GELU hidden layer.
Matrix mlp_sublayer(const Matrix& z, const BlockWeights& block);

/// Attention then MLP sub-layer.
BlockOutput encoder_block(const Matrix& z, const BlockWeights& block);

/// Mean over the query axis of each head's attention, reshaped to the token
/// grid. Each returned volume sums to 1.
std::vector<AttentionVolume> extract_attention_volumes(const AttentionWeights& attention,
                                                       GridExtents grid);

/// Mean-pool tokens, then an affine map to class logits.
std::vector<double> classify(const Matrix& z, const Matrix& head, std::span<const double> bias);

/// Number of views averaged at evaluation time: 4 temporal clips x 3 crops.
inline constexpr std::size_t kEnsembleViews = 12;

/// Element-wise mean of exactly kEnsembleViews score vectors.
std::vector<double> views_ensemble(const std::vector<std::vector<double>>& scores);

/// Softmax with max subtraction.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace mvdgw
