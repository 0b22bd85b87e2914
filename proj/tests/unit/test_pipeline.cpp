#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mvdgw/errors.hpp"
#include "mvdgw/pipeline.hpp"

using namespace mvdgw;

namespace {

double centroid_x(const Tensor& video, std::size_t frame, double background) {
    const auto& s = video.shape();
    double mass = 0.0, mx = 0.0;
    for (std::size_t r = 0; r < s[1]; ++r)
        for (std::size_t c = 0; c < s[2]; ++c) {
            const double v = video[((frame * s[1] + r) * s[2] + c) * 3] - background;
            mass += v;
            mx += v * static_cast<double>(c);
        }
    return mx / mass;
}

PipelineConfig default_config() {
    PipelineConfig c;
    c.finalize();
    return c;
}

}  // namespace

TEST(Synth, StaticSceneHasIdenticalFrames) {
    SceneSpec s;
    s.blob_velocity = {0, 0, 0};
    const auto v = synth_scene(s, 0.0).video;
    const std::size_t frame = s.height * s.width * 3;
    for (std::size_t f = 1; f < s.frames; ++f)
        for (std::size_t i = 0; i < frame; ++i) ASSERT_EQ(v[f * frame + i], v[i]);
}

TEST(Synth, MirroredViewsMirrorTheCentroid) {
    SceneSpec s;
    s.blob_start = {0.0, 0.1, 0.3};
    s.blob_velocity = {0.0, 0.0, -0.2};
    s.width = 16;
    s.height = 12;
    const auto a = synth_scene(s, 10.0).video;
    const auto b = synth_scene(s, -10.0).video;
    const double cx = (16.0 - 1.0) / 2.0;
    for (std::size_t f = 0; f < s.frames; ++f) {
        const double xa = centroid_x(a, f, s.background);
        const double xb = centroid_x(b, f, s.background);
        EXPECT_NEAR(xa - cx, cx - xb, 1.0);
        EXPECT_GT(std::abs(xa - cx), 0.1);
    }
}

TEST(Synth, BackgroundOnly) {
    SceneSpec s;
    s.blob_amplitude = 0.0;
    s.background = 0.37;
    for (double x : synth_scene(s, 3.0).video.values()) EXPECT_EQ(x, 0.37);
}

TEST(Synth, InvisibleBlobIsFlaggedNotFatal) {
    SceneSpec s;
    s.blob_start = {0.0, 0.0, 5.0};  // behind the camera
    s.blob_velocity = {0.0, 0.0, 0.0};
    const auto r = synth_scene(s, 0.0);
    EXPECT_FALSE(r.blob_visible);
    EXPECT_TRUE(synth_scene(SceneSpec{}, 0.0).blob_visible);
}

TEST(Synth, NoiseIsSeeded) {
    SceneSpec s;
    s.noise = 0.05;
    EXPECT_EQ(synth_scene(s, 1.0).video, synth_scene(s, 1.0).video);
    SceneSpec t = s;
    t.seed = 1;
    EXPECT_NE(synth_scene(s, 1.0).video, synth_scene(t, 1.0).video);
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_THROW(parse_scene_spec(R"({"frames": 4, "colour": 1})"), ConfigError);
    EXPECT_THROW(parse_pipeline_config(R"({"scene": {}, "extra": 1})"), ConfigError);
    EXPECT_THROW(parse_pipeline_config(R"({"solver": {"eps": 0.1}})"), ConfigError);
    EXPECT_THROW(parse_pipeline_config(R"({"scene": {"frames": -1}})"), ConfigError);
    EXPECT_THROW(parse_pipeline_config(R"({"solver": {"log_domain": "maybe"}})"), ConfigError);
    EXPECT_THROW(parse_pipeline_config("{not json"), ConfigError);
}

TEST(Config, SectionsAndBareScene) {
    const auto c = parse_pipeline_config(R"({
        "scene": {"frames": 2, "height": 4, "width": 6, "camera_radius": 3.0},
        "model": {"heads": 2, "width": 8, "mlp_hidden": 8, "classes": 3},
        "solver": {"epsilon": 0.2, "log_domain": "on"},
        "loss": {"lambda_cls": 0.5, "lambda_dgw": 2.0}
    })");
    EXPECT_EQ(c.model.frames, 2u);
    EXPECT_EQ(c.render.grid, (GridExtents{2, 2, 3}));
    EXPECT_EQ(c.render.features, 8u);
    EXPECT_DOUBLE_EQ(c.render.near, 0.3);
    EXPECT_DOUBLE_EQ(c.render.far, 6.0);
    EXPECT_EQ(c.solver.log_domain, LogDomain::On);
    EXPECT_EQ(c.loss.lambda_dgw, 2.0);

    const auto bare = parse_pipeline_config(R"({"frames": 2, "seed": 7})");
    EXPECT_EQ(bare.scene.frames, 2u);
    EXPECT_EQ(bare.scene.seed, 7u);
}

TEST(Loss, Examples) {
    EXPECT_EQ(LossWeights{}.lambda_cls, 1.0);
    EXPECT_EQ(LossWeights{}.lambda_dgw, 1.0);
    const std::vector<double> logits{0.3, -1.2, 2.0};
    const auto r = total_loss(logits, 2, 0.0, {});
    EXPECT_EQ(r.total, r.ce);
    EXPECT_NEAR(cross_entropy(std::vector<double>(4, 0.7), 1), std::log(4.0), 1e-15);
    EXPECT_NEAR(std::log(4.0), 1.38629, 1e-5);
    const auto w = total_loss(logits, 0, 0.25, {0.5, 2.0});
    EXPECT_EQ(w.total, 0.5 * w.ce + 2.0 * 0.25);
    EXPECT_THROW(cross_entropy(logits, 3), ValidationError);
    EXPECT_THROW(total_loss(logits, 0, 0.0, {-1.0, 1.0}), ConfigError);
}

TEST(Forward, ShapesAndDeterminism) {
    const auto cfg = default_config();
    const auto model = Model::init(cfg.model, cfg.field, 3);
    const auto video = synth_scene(cfg.scene, 0.0).video;
    const auto a = forward(video, 4.0, model, cfg);
    const auto b = forward(video, 4.0, model, cfg);
    ASSERT_EQ(a.logits.size(), cfg.model.classes);
    ASSERT_EQ(a.volumes.size(), cfg.model.heads);
    EXPECT_EQ(a.logits, b.logits);
    for (std::size_t h = 0; h < a.volumes.size(); ++h) {
        EXPECT_EQ(a.volumes[h].to_tensor(), b.volumes[h].to_tensor());
        double s = 0.0;
        for (double x : a.volumes[h].mass()) s += x;
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    // Threaded rendering changes nothing.
    const auto c = forward(video, 4.0, model, cfg, 3);
    EXPECT_EQ(a.logits, c.logits);
}

TEST(Forward, ViewsDiffer) {
    const auto cfg = default_config();
    const auto model = Model::init(cfg.model, cfg.field, 4);
    const auto video = synth_scene(cfg.scene, 0.0).video;
    EXPECT_NE(forward(video, -10.0, model, cfg).logits, forward(video, 10.0, model, cfg).logits);
}

TEST(Consistency, SameAngleIsNearZero) {
    auto cfg = default_config();
    cfg.solver.epsilon = 0.01;
    const auto model = Model::init(cfg.model, cfg.field, 5);
    const auto video = synth_scene(cfg.scene, 0.0).video;
    const auto r = pairwise_consistency(video, 3.0, 3.0, model, cfg);
    EXPECT_LE(r.mean, 0.02);
    ASSERT_EQ(r.per_head.size(), cfg.model.heads);
}

TEST(Consistency, SymmetricInAngles) {
    const auto cfg = default_config();
    const auto model = Model::init(cfg.model, cfg.field, 6);
    const auto video = synth_scene(cfg.scene, 0.0).video;
    const auto ab = pairwise_consistency(video, -7.0, 9.0, model, cfg);
    const auto ba = pairwise_consistency(video, 9.0, -7.0, model, cfg, 2);
    EXPECT_NEAR(ab.mean, ba.mean, 1e-6);
}

TEST(Consistency, AngleRange) {
    const auto cfg = default_config();
    EXPECT_EQ(cfg.beta_min, -10.0);
    EXPECT_EQ(cfg.beta_max, 10.0);
    const auto model = Model::init(cfg.model, cfg.field, 7);
    const auto video = synth_scene(cfg.scene, 0.0).video;
    EXPECT_THROW(pairwise_consistency(video, -12.0, 0.0, model, cfg), ValidationError);
}

TEST(Report, ArithmeticAndFiniteness) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> beta(-10.0, 10.0);
    std::uniform_real_distribution<double> pos(-0.6, 0.6);
    for (int trial = 0; trial < 5; ++trial) {
        auto cfg = default_config();
        cfg.scene.blob_start = {pos(rng), pos(rng), pos(rng)};
        cfg.scene.noise = 0.02;
        cfg.scene.seed = static_cast<std::uint64_t>(trial);
        const auto r = run_pipeline(cfg, beta(rng), beta(rng), trial % 8, {static_cast<std::uint64_t>(trial), 1, false});
        EXPECT_EQ(r.total, r.lambda_cls * r.ce + r.lambda_dgw * r.mean_dgw);
        for (double x : r.logits_view1) EXPECT_TRUE(std::isfinite(x));
        for (double x : r.dgw_per_head) EXPECT_TRUE(std::isfinite(x));
        EXPECT_TRUE(std::isfinite(r.total));
    }
}

TEST(Report, JsonIsStable) {
    const auto cfg = default_config();
    const auto a = run_pipeline(cfg, -10.0, 10.0, 1, {11, 1, false}).to_json();
    const auto b = run_pipeline(cfg, -10.0, 10.0, 1, {11, 2, false}).to_json();
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.find("seconds"), std::string::npos);
    EXPECT_EQ(a.rfind("{\n  \"beta1\": -10,\n  \"beta2\": 10,\n  \"label\": 1,", 0), 0u);
    const auto t = run_pipeline(cfg, -10.0, 10.0, 1, {11, 1, true}).to_json();
    EXPECT_NE(t.find("seconds_consistency"), std::string::npos);
}

TEST(Weights, SaveLoadRoundTrip) {
    const auto cfg = default_config();
    const auto model = Model::init(cfg.model, cfg.field, 12);
    const auto dir = std::filesystem::temp_directory_path() / "mvdgw_weights_test";
    std::filesystem::remove_all(dir);
    save_model(dir, model);
    ASSERT_TRUE(std::filesystem::exists(dir / "manifest.json"));
    const auto back = load_model(dir);
    EXPECT_EQ(back.weights.positional, model.weights.positional);
    EXPECT_EQ(back.mlp.head, model.mlp.head);
    EXPECT_EQ(back.mapper.maps.back(), model.mapper.maps.back());
    const auto video = synth_scene(cfg.scene, 0.0).video;
    EXPECT_EQ(forward(video, 2.0, model, cfg).logits, forward(video, 2.0, back, cfg).logits);
    std::filesystem::remove(dir / "classifier.dgwt");
    EXPECT_THROW(load_model(dir), Error);
    std::filesystem::remove_all(dir);
}
