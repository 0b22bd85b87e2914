#pragma once

// Style-modulated field MLP and discrete volumetric rendering of feature
// volumes from a camera that turns horizontally around a scene center.
//
// Along a ray with samples u_1 < ... < u_N the rendered feature is
//
//     z_r = sum_i T_i (1 - exp(-sigma_i delta_i)) z_i,
//     T_i = exp(-sum_{j<i} sigma_j delta_j).

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mvdgw/tensor.hpp"

namespace mvdgw {

/// Camera-to-world extrinsics [R | t]. The camera looks down its local -z
/// axis with +y up.
class CameraPose {
public:
    /// Throws ValidationError unless R is orthonormal (1e-9) with det +1.
    CameraPose(Matrix extrinsics, double beta_degrees = 0.0);

    const Matrix& extrinsics() const noexcept { return extrinsics_; }
    double beta() const noexcept { return beta_; }
    double rotation(std::size_t r, std::size_t c) const { return extrinsics_(r, c); }
    Vec3 position() const { return {extrinsics_(0, 3), extrinsics_(1, 3), extrinsics_(2, 3)}; }
    /// R applied to a camera-frame vector.
    Vec3 to_world(const Vec3& v) const;

private:
    Matrix extrinsics_;
    double beta_;
};

/// Camera on the horizontal circle of `radius` about `center`, looking at it.
/// beta = 0 puts it at center + (0, 0, radius) with R = I.
CameraPose pose_from_angle(double beta_degrees, const Vec3& center = {0.0, 0.0, 0.0},
                           double radius = 2.0);

struct Ray {
    Vec3 origin{};
    Vec3 direction{0.0, 0.0, -1.0};
    double near = 0.2;
    double far = 4.0;
};

struct RenderConfig {
    std::size_t samples = 64;
    double near = 0.2;
    double far = 4.0;
    bool stratified = false;
    std::uint64_t sampling_seed = 0;
    double fov_degrees = 60.0;
    // Output grid (t, h, w) and feature width d.
    GridExtents grid{4, 7, 7};
    std::size_t features = 32;

    void validate() const;
};

/// One ray per (row, col) cell of an h x w image plane, row-major, through a
/// pinhole with the configured horizontal field of view and square pixels.
std::vector<Ray> generate_rays(const CameraPose& pose, std::size_t height, std::size_t width,
                               const RenderConfig& config);

struct FieldConfig {
    std::size_t layers = 8;
    std::size_t width = 32;
    std::size_t features = 32;
    double leaky_slope = 0.01;

    static constexpr std::size_t kInputs = 6;  // point, direction

    std::size_t input_dim(std::size_t layer) const { return layer == 0 ? kInputs : width; }
    void validate() const;
};

/// Leaky-ReLU MLP from (point, direction) to (features, density).
struct FieldMLP {
    FieldConfig config;
    std::vector<Matrix> weights;  // layer l: width x input_dim(l)
    std::vector<std::vector<double>> biases;
    Matrix head;  // (features + 1) x width, density last
    std::vector<double> head_bias;

    static FieldMLP init(const FieldConfig& config, std::uint64_t seed);
    void validate() const;
};

/// Per-layer style vectors; style[l] has length input_dim(l).
using StyleVectors = std::vector<std::vector<double>>;

/// Seeded linear maps from a pooled feature code to per-layer styles.
struct StyleMapper {
    std::vector<Matrix> maps;  // layer l: input_dim(l) x code_dim
    std::vector<std::vector<double>> biases;

    static StyleMapper init(const FieldConfig& field, std::size_t code_dim, std::uint64_t seed);
    std::size_t code_dim() const { return maps.empty() ? 0 : maps.front().cols(); }
};

/// Global average over (t, h, w) of a (t, h, w, d) feature volume.
std::vector<double> pool_features(const Tensor& z);

StyleVectors style_map(const StyleMapper& mapper, std::span<const double> pooled);
StyleVectors style_map(const StyleMapper& mapper, const Tensor& z);

/// Column c of every weight row is scaled by 1 + style[c]; each row is then
/// rescaled to its original L2 norm.
FieldMLP modulate_weights(const FieldMLP& mlp, const StyleVectors& style);

struct FieldSample {
    std::vector<double> feature;
    double density = 0.0;
};

FieldSample field_eval(const FieldMLP& mlp, const Vec3& point, const Vec3& direction);

using Field = std::function<FieldSample(const Vec3& point, const Vec3& direction)>;

/// Sample depths on [ray.near, ray.far]. Uniform: near + (far - near) i / (N - 1).
/// Stratified: one uniform draw inside each of N equal bins, seeded by `seed`.
std::vector<double> sample_depths(const Ray& ray, std::size_t samples, bool stratified,
                                  std::uint64_t seed);

/// T_i (1 - exp(-sigma_i delta_i)).
std::vector<double> compositing_weights(std::span<const double> density,
                                        std::span<const double> delta);

struct RayRender {
    std::vector<double> feature;
    std::vector<double> weights;
};

/// The last interval repeats the previous one. `ray_seed` only matters when
/// sampling is stratified.
RayRender render_ray(const Field& field, const Ray& ray, const RenderConfig& config,
                     std::uint64_t ray_seed = 0);
RayRender render_ray(const FieldMLP& mlp, const Ray& ray, const RenderConfig& config,
                     std::uint64_t ray_seed = 0);

/// Renders a (t, h, w, d) volume from a (t', h', w', d') code volume. Frame k
/// uses the style of the per-frame pooled code, linearly interpolated in time.
Tensor render_feature_volume(const Tensor& z, const CameraPose& pose, const FieldMLP& mlp,
                             const StyleMapper& mapper, const RenderConfig& config,
                             unsigned threads = 1);

}  // namespace mvdgw
