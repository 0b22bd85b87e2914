#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "mvdgw/attention.hpp"
#include "mvdgw/errors.hpp"

using namespace mvdgw;

namespace {

TransformerConfig small_config() {
    TransformerConfig c;
    c.frames = 2;
    c.height = 4;
    c.video_width = 4;
    c.width = 16;
    c.heads = 4;
    c.mlp_hidden = 24;
    c.classes = 3;
    return c;
}

Tensor random_video(std::mt19937_64& rng, const TransformerConfig& c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> data(c.frames * c.height * c.video_width * 3);
    for (auto& x : data) x = u(rng);
    return Tensor({c.frames, c.height, c.video_width, 3}, std::move(data));
}

Matrix random_tokens(std::mt19937_64& rng, std::size_t P, std::size_t d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix z(P, d);
    for (auto& x : z.values()) x = n(rng);
    return z;
}

}  // namespace

TEST(PatchEmbed, WholeVideoPatch) {
    TransformerConfig c = small_config();
    c.frames = 1;
    c.height = 2;
    c.video_width = 2;
    const auto w = ModelWeights::init(c, 1);
    const Matrix z = patch_embed(Tensor({1, 2, 2, 3}), w);
    EXPECT_EQ(z.rows(), 1u);
    EXPECT_EQ(z.cols(), c.width);
}

TEST(PatchEmbed, ZeroVideoAndZeroPositionsGiveZeros) {
    auto w = ModelWeights::init(small_config(), 2);
    w.positional = Matrix(w.positional.rows(), w.positional.cols());
    const Matrix z = patch_embed(Tensor({2, 4, 4, 3}), w);
    for (double x : z.values()) EXPECT_EQ(x, 0.0);
}

TEST(PatchEmbed, PatchCount) {
    TransformerConfig c = small_config();
    const auto w = ModelWeights::init(c, 3);
    EXPECT_EQ(patch_embed(Tensor({2, 4, 4, 3}), w).rows(), 8u);  // (2/1)(4/2)(4/2)
}

TEST(PatchEmbed, PatchesFollowTokenGridOrder) {
    // Patch p must gather pixels of token-grid cell unflatten(p).
    TransformerConfig c = small_config();
    auto w = ModelWeights::init(c, 4);
    w.positional = Matrix(w.positional.rows(), w.positional.cols());
    std::vector<double> data(2 * 4 * 4 * 3, 0.0);
    // Light one pixel in frame 1, row 2, col 3 -> token (1, 1, 1) = index 7.
    data[((1 * 4 + 2) * 4 + 3) * 3 + 0] = 1.0;
    const Matrix z = patch_embed(Tensor({2, 4, 4, 3}, data), w);
    for (std::size_t p = 0; p < z.rows(); ++p) {
        const double norm = std::sqrt(std::inner_product(z.row(p).begin(), z.row(p).end(),
                                                         z.row(p).begin(), 0.0));
        if (p == 7) {
            EXPECT_GT(norm, 0.0);
        } else {
            EXPECT_EQ(norm, 0.0);
        }
    }
}

TEST(PatchEmbed, IndivisibleExtentsAreConfigErrors) {
    TransformerConfig c = small_config();
    c.height = 5;
    EXPECT_THROW(c.validate(), ConfigError);
    TransformerConfig d = small_config();
    d.width = 18;
    EXPECT_THROW(d.validate(), ConfigError);
    const auto w = ModelWeights::init(small_config(), 5);
    EXPECT_THROW(patch_embed(Tensor({2, 4, 6, 3}), w), ConfigError);
}

TEST(LayerNorm, Examples) {
    const std::vector<double> ones(4, 1.0);
    const std::vector<double> zeros(4, 0.0);
    for (double x : layer_norm(std::vector<double>(4, 3.5), ones, zeros)) EXPECT_EQ(x, 0.0);

    const auto pm = layer_norm(std::vector<double>{1.0, -1.0}, {ones.data(), 2}, {zeros.data(), 2});
    EXPECT_NEAR(pm[0], 1.0, 1e-5);
    EXPECT_NEAR(pm[1], -1.0, 1e-5);
    EXPECT_NEAR(pm[0], 1.0 / std::sqrt(1.0 + 1e-5), 1e-15);

    const std::vector<double> b{0.3, -0.2, 0.7};
    const auto c = layer_norm(std::vector<double>{5.0, 1.0, -2.0}, std::vector<double>(3, 0.0), b);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(c[i], b[i]);
}

TEST(SelfAttention, SinglePatchAttendsToItself) {
    TransformerConfig c = small_config();
    const auto w = ModelWeights::init(c, 6);
    std::mt19937_64 rng(1);
    const auto out = multi_head_self_attention(random_tokens(rng, 1, c.width), w.blocks[0]);
    ASSERT_EQ(out.attention.heads.size(), c.heads);
    for (const auto& a : out.attention.heads) EXPECT_EQ(a, Matrix(1, 1, {1.0}));
}

TEST(SelfAttention, IdenticalTokensGiveUniformRows) {
    TransformerConfig c = small_config();
    const auto w = ModelWeights::init(c, 7);
    std::mt19937_64 rng(2);
    const Matrix one = random_tokens(rng, 1, c.width);
    Matrix z(5, c.width);
    for (std::size_t p = 0; p < 5; ++p) std::copy(one.row(0).begin(), one.row(0).end(), z.row(p).begin());
    const auto out = multi_head_self_attention(z, w.blocks[0]);
    for (const auto& a : out.attention.heads)
        for (double x : a.values()) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(SelfAttention, RowsAreStochastic) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        TransformerConfig c = small_config();
        const auto w = ModelWeights::init(c, 100 + trial);
        const auto z = random_tokens(rng, 8, c.width);
        const auto out = encoder_block(z, w.blocks[trial % 2]);
        for (const auto& a : out.attention.heads) {
            for (std::size_t p = 0; p < a.rows(); ++p) {
                double s = 0.0;
                for (double x : a.row(p)) {
                    ASSERT_GE(x, 0.0);
                    s += x;
                }
                ASSERT_NEAR(s, 1.0, 1e-9);
            }
        }
    }
}

TEST(SelfAttention, PermutationEquivariance) {
    std::mt19937_64 rng(4);
    TransformerConfig c = small_config();
    auto w = ModelWeights::init(c, 8);
    w.positional = Matrix(w.positional.rows(), w.positional.cols());
    const Tensor video = random_video(rng, c);
    const Matrix z = patch_embed(video, w);
    const std::size_t P = z.rows();

    std::vector<std::size_t> perm(P);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix zp(P, z.cols());
    for (std::size_t p = 0; p < P; ++p) std::copy(z.row(perm[p]).begin(), z.row(perm[p]).end(), zp.row(p).begin());

    BlockOutput a{z, {}};
    BlockOutput b{zp, {}};
    for (const auto& block : w.blocks) {
        a = encoder_block(a.z, block);
        b = encoder_block(b.z, block);
        for (std::size_t h = 0; h < a.attention.heads.size(); ++h)
            for (std::size_t p = 0; p < P; ++p)
                for (std::size_t q = 0; q < P; ++q)
                    ASSERT_NEAR(b.attention.heads[h](p, q), a.attention.heads[h](perm[p], perm[q]), 1e-9);
    }
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t j = 0; j < z.cols(); ++j) ASSERT_NEAR(b.z(p, j), a.z(perm[p], j), 1e-9);
}

TEST(SelfAttention, Deterministic) {
    std::mt19937_64 rng(5);
    const auto c = small_config();
    const auto w1 = ModelWeights::init(c, 42);
    const auto w2 = ModelWeights::init(c, 42);
    const auto z = random_tokens(rng, 8, c.width);
    const auto a = encoder_block(z, w1.blocks[0]);
    const auto b = encoder_block(z, w2.blocks[0]);
    EXPECT_EQ(a.z, b.z);
    for (std::size_t h = 0; h < a.attention.heads.size(); ++h) EXPECT_EQ(a.attention.heads[h], b.attention.heads[h]);
}

TEST(ExtractVolumes, Examples) {
    const auto single = extract_attention_volumes({{Matrix(1, 1, {1.0})}}, {1, 1, 1});
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(single[0].mass()[0], 1.0);

    const auto uniform = extract_attention_volumes({{Matrix(8, 8, 0.125)}}, {2, 2, 2});
    for (double x : uniform[0].mass()) EXPECT_DOUBLE_EQ(x, 0.125);

    EXPECT_THROW(extract_attention_volumes({{Matrix(8, 8, 0.125)}}, {1, 2, 2}), ConfigError);
}

TEST(ExtractVolumes, ThirtyTwoHeads) {
    TransformerConfig c = small_config();
    c.heads = 32;
    c.width = 64;
    const auto w = ModelWeights::init(c, 9);
    std::mt19937_64 rng(6);
    const Matrix z = patch_embed(random_video(rng, c), w);
    const auto out = encoder_block(z, w.blocks.back());
    const auto volumes = extract_attention_volumes(out.attention, c.token_grid());
    ASSERT_EQ(volumes.size(), 32u);
    for (const auto& v : volumes) {
        EXPECT_NEAR(std::accumulate(v.mass().begin(), v.mass().end(), 0.0), 1.0, 1e-9);
    }
}

TEST(Classify, Examples) {
    const Matrix zeros(4, 3);
    for (double x : classify(zeros, Matrix(2, 3, 0.7), std::vector<double>(2, 0.0))) EXPECT_EQ(x, 0.0);

    Matrix feat(2, 2, {1.0, 0.0, 3.0, 0.0});  // pooled (2, 0)
    const Matrix head(2, 2, {1.0, 0.0, -1.0, 0.0});
    const std::vector<double> bias(2, 0.0);
    const auto pos = classify(feat, head, bias);
    EXPECT_GT(pos[0], pos[1]);
    for (auto& x : feat.values()) x = -x;
    const auto neg = classify(feat, head, bias);
    EXPECT_LT(neg[0], neg[1]);

    const Matrix tokens(3, 4, {1, 2, 3, 4, 3, 2, 1, 0, 2, 2, 2, 2});  // pooled (2, 2, 2, 2)
    const Matrix prefix(2, 4, {1, 0, 0, 0, 0, 1, 0, 0});
    const auto logits = classify(tokens, prefix, std::vector<double>(2, 0.0));
    EXPECT_DOUBLE_EQ(logits[0], 2.0);
    EXPECT_DOUBLE_EQ(logits[1], 2.0);
}

TEST(ViewsEnsemble, Examples) {
    const std::vector<double> v{1.0, -2.0, 0.5};
    EXPECT_EQ(views_ensemble(std::vector<std::vector<double>>(12, v)), v);

    std::vector<std::vector<double>> mixed(6, v);
    for (int i = 0; i < 6; ++i) mixed.push_back({-1.0, 2.0, -0.5});
    for (double x : views_ensemble(mixed)) EXPECT_EQ(x, 0.0);

    std::mt19937_64 rng(7);
    std::normal_distribution<double> n;
    std::vector<std::vector<double>> random(12, std::vector<double>(5));
    for (auto& s : random)
        for (auto& x : s) x = n(rng);
    const auto mean = views_ensemble(random);
    for (std::size_t k = 0; k < 5; ++k) {
        double s = 0.0;
        for (std::size_t view = 0; view < 12; ++view) s += random[view][k];
        EXPECT_NEAR(mean[k], s / 12.0, 1e-15);
    }
    EXPECT_THROW(views_ensemble(std::vector<std::vector<double>>(11, v)), ValidationError);
}
