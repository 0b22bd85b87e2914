#pragma once

// End-to-end forward pass: synthetic video -> transformer blocks -> rendered
// view -> last block -> logits and attention volumes -> DGW consistency and
// total loss.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvdgw/attention.hpp"
#include "mvdgw/gw.hpp"
#include "mvdgw/renderer.hpp"
#include "mvdgw/tensor.hpp"

namespace mvdgw {

/// A Gaussian blob moving in front of a camera on a horizontal circle.
struct SceneSpec {
    Vec3 blob_start{-0.5, 0.0, 0.0};
    Vec3 blob_velocity{0.25, 0.0, 0.0};  // per frame
    double blob_radius = 0.3;
    double blob_amplitude = 1.0;
    Vec3 blob_color{1.0, 0.5, 0.25};
    std::size_t frames = 4;
    std::size_t height = 8;
    std::size_t width = 8;
    double camera_radius = 2.0;
    Vec3 camera_center{0.0, 0.0, 0.0};
    double fov_degrees = 60.0;
    double background = 0.1;
    double noise = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthResult {
    Tensor video;  // (frames, height, width, 3)
    bool blob_visible = true;
};

/// Deterministic in (spec, beta). Projects the blob through the same pinhole
/// the renderer uses.
SynthResult synth_scene(const SceneSpec& spec, double beta_degrees);

struct LossWeights {
    double lambda_cls = 1.0;
    double lambda_dgw = 1.0;

    void validate() const;
};

struct PipelineConfig {
    SceneSpec scene;
    TransformerConfig model;
    FieldConfig field;
    RenderConfig render;
    // Sharper than the solver default so self-comparisons sit near zero.
    SolverConfig solver{.epsilon = 0.01};
    LossWeights loss;
    AxisScales scales;
    double beta_min = -10.0;
    double beta_max = 10.0;

    /// Fills the derived fields (video extents, render grid and feature
    /// width) from the scene and model sections, then validates.
    void finalize();
};

/// Parses a pipeline configuration. Top-level sections: scene, model, field,
/// render, solver, loss, scales, beta_range. A document with none of these
/// keys is read as a bare scene section. Unknown keys throw ConfigError.
PipelineConfig parse_pipeline_config(const std::string& json_text);
SceneSpec parse_scene_spec(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
SceneSpec load_scene_spec(const std::filesystem::path& path);

/// Transformer, field and style weights plus the configs they were built for.
struct Model {
    TransformerConfig transformer;
    FieldConfig field;
    ModelWeights weights;
    FieldMLP mlp;
    StyleMapper mapper;

    static Model init(const TransformerConfig& transformer, const FieldConfig& field,
                      std::uint64_t seed);
    void validate() const;
};

/// Weights directory: manifest.json plus one DGWT file per named tensor.
void save_model(const std::filesystem::path& dir, const Model& model);
Model load_model(const std::filesystem::path& dir);

struct ForwardResult {
    std::vector<double> logits;
    std::vector<AttentionVolume> volumes;
};

/// Blocks 0..L-2, feature rendering at pose(beta), block L-1, classifier.
ForwardResult forward(const Tensor& video, double beta_degrees, const Model& model,
                      const PipelineConfig& config, unsigned threads = 1);

/// Tokens (P x d) to a (t, h, w, d) volume and back.
Tensor tokens_to_volume(const Matrix& z, GridExtents grid);
Matrix volume_to_tokens(const Tensor& volume);

struct ConsistencyResult {
    std::vector<double> per_head;
    std::vector<bool> converged;
    double mean = 0.0;
    ForwardResult view1;
    ForwardResult view2;
};

/// Head i of view 1 against head i of view 2, averaged after solving.
ConsistencyResult pairwise_consistency(const Tensor& video, double beta1, double beta2,
                                       const Model& model, const PipelineConfig& config,
                                       unsigned threads = 1);

double cross_entropy(std::span<const double> logits, std::size_t label);

struct LossBreakdown {
    double ce = 0.0;
    double total = 0.0;
};

LossBreakdown total_loss(std::span<const double> logits, std::size_t label, double mean_dgw,
                         const LossWeights& weights);

struct RunReport {
    double beta1 = 0.0;
    double beta2 = 0.0;
    std::size_t label = 0;
    std::vector<double> logits_view1;
    std::vector<double> logits_view2;
    std::vector<double> dgw_per_head;
    std::vector<bool> converged;
    double mean_dgw = 0.0;
    double ce = 0.0;
    double lambda_cls = 1.0;
    double lambda_dgw = 1.0;
    double total = 0.0;
    bool blob_visible = true;
    bool include_timings = false;
    double seconds_setup = 0.0;
    double seconds_consistency = 0.0;

    /// JSON with fixed key order and %.17g numbers.
    std::string to_json() const;
};

struct PipelineOptions {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool timings = false;
};

/// Synthesises the scene at beta = 0, runs both views and the losses. CE is
/// the mean over the two views.
RunReport run_pipeline(const PipelineConfig& config, double beta1, double beta2,
                       std::size_t label, const PipelineOptions& options);

}  // namespace mvdgw
