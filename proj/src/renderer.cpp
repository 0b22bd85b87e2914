#include "mvdgw/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include "init.hpp"
#include "mvdgw/errors.hpp"

namespace mvdgw {

namespace {

double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

Vec3 normalized(const Vec3& v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    return {v[0] / n, v[1] / n, v[2] / n};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finaliser
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::vector<double> dense(const Matrix& w, std::span<const double> x, const std::vector<double>& b) {
    std::vector<double> y = matvec(w, x);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
    return y;
}

}  // namespace

CameraPose::CameraPose(Matrix extrinsics, double beta_degrees)
    : extrinsics_(std::move(extrinsics)), beta_(beta_degrees) {
    if (extrinsics_.rows() != 3 || extrinsics_.cols() != 4)
        throw ValidationError("camera extrinsics must be 3x4");
    if (!detail::all_finite(extrinsics_.values()))
        throw ValidationError("camera extrinsics must be finite");
    for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = 0; b < 3; ++b) {
            double dot = 0.0;
            for (std::size_t k = 0; k < 3; ++k) dot += extrinsics_(k, a) * extrinsics_(k, b);
            if (std::abs(dot - (a == b ? 1.0 : 0.0)) > 1e-9)
                throw ValidationError("camera rotation is not orthonormal");
        }
    }
    const auto& m = extrinsics_;
    const double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                       m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                       m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    if (det < 0.0) throw ValidationError("camera rotation must have determinant +1");
}

Vec3 CameraPose::to_world(const Vec3& v) const {
    Vec3 out{};
    for (std::size_t r = 0; r < 3; ++r)
        out[r] = extrinsics_(r, 0) * v[0] + extrinsics_(r, 1) * v[1] + extrinsics_(r, 2) * v[2];
    return out;
}

CameraPose pose_from_angle(double beta_degrees, const Vec3& center, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius))
        throw ValidationError("camera radius must be positive");
    const double b = radians(beta_degrees);
    const double c = std::cos(b);
    const double s = std::sin(b);
    Matrix m(3, 4, {c, 0.0, s, center[0] + radius * s,  //
                    0.0, 1.0, 0.0, center[1],           //
                    -s, 0.0, c, center[2] + radius * c});
    return CameraPose(std::move(m), beta_degrees);
}

void RenderConfig::validate() const {
    if (samples < 2) throw ConfigError("render: samples must be >= 2");
    if (!(near >= 0.0) || !(far > near) || !std::isfinite(far))
        throw ConfigError("render: need 0 <= near < far");
    if (!(fov_degrees > 0.0 && fov_degrees < 180.0))
        throw ConfigError("render: fov must lie in (0, 180) degrees");
    if (grid.t == 0 || grid.h == 0 || grid.w == 0 || features == 0)
        throw ConfigError("render: grid extents and feature width must be positive");
}

std::vector<Ray> generate_rays(const CameraPose& pose, std::size_t height, std::size_t width,
                               const RenderConfig& config) {
    config.validate();
    if (height == 0 || width == 0) throw ConfigError("render: image plane must be non-empty");
    const double pitch = 2.0 * std::tan(radians(config.fov_degrees) / 2.0) /
                         static_cast<double>(std::max<std::size_t>(width - 1, 1));
    const double cx = (static_cast<double>(width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(height) - 1.0) / 2.0;
    const Vec3 origin = pose.position();

    std::vector<Ray> rays;
    rays.reserve(height * width);
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const Vec3 local{(static_cast<double>(c) - cx) * pitch,
                             (cy - static_cast<double>(r)) * pitch, -1.0};
            rays.push_back({origin, normalized(pose.to_world(local)), config.near, config.far});
        }
    }
    return rays;
}

void FieldConfig::validate() const {
    if (layers == 0 || width == 0 || features == 0)
        throw ConfigError("field: layers, width and features must be positive");
    if (!(leaky_slope >= 0.0) || !std::isfinite(leaky_slope))
        throw ConfigError("field: leaky slope must be finite and non-negative");
}

FieldMLP FieldMLP::init(const FieldConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    FieldMLP mlp;
    mlp.config = config;
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::size_t in = config.input_dim(l);
        mlp.weights.push_back(detail::uniform_matrix(rng, config.width, in, 1.0 / std::sqrt(double(in))));
        mlp.biases.emplace_back(config.width, 0.0);
    }
    mlp.head = detail::uniform_matrix(rng, config.features + 1, config.width,
                                      1.0 / std::sqrt(double(config.width)));
    mlp.head_bias.assign(config.features + 1, 0.0);
    return mlp;
}

void FieldMLP::validate() const {
    config.validate();
    if (weights.size() != config.layers || biases.size() != config.layers)
        throw ValidationError("field: layer count mismatch");
    for (std::size_t l = 0; l < config.layers; ++l) {
        if (weights[l].rows() != config.width || weights[l].cols() != config.input_dim(l) ||
            biases[l].size() != config.width)
            throw ValidationError("field: layer " + std::to_string(l) + " has the wrong shape");
        if (!detail::all_finite(weights[l].values()) || !detail::all_finite(biases[l]))
            throw ValidationError("field: non-finite weights");
    }
    if (head.rows() != config.features + 1 || head.cols() != config.width ||
        head_bias.size() != config.features + 1)
        throw ValidationError("field: head has the wrong shape");
    if (!detail::all_finite(head.values()) || !detail::all_finite(head_bias))
        throw ValidationError("field: non-finite weights");
}

StyleMapper StyleMapper::init(const FieldConfig& field, std::size_t code_dim, std::uint64_t seed) {
    field.validate();
    if (code_dim == 0) throw ConfigError("style: code width must be positive");
    std::mt19937_64 rng(seed);
    StyleMapper mapper;
    const double bound = 0.5 / std::sqrt(double(code_dim));
    for (std::size_t l = 0; l < field.layers; ++l) {
        mapper.maps.push_back(detail::uniform_matrix(rng, field.input_dim(l), code_dim, bound));
        mapper.biases.emplace_back(field.input_dim(l), 0.0);
    }
    return mapper;
}

std::vector<double> pool_features(const Tensor& z) {
    if (z.rank() != 4) throw ValidationError("feature volume must have rank 4 (t, h, w, d)");
    const std::size_t d = z.shape()[3];
    const std::size_t cells = z.size() / d;
    std::vector<double> pooled(d, 0.0);
    for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t k = 0; k < d; ++k) pooled[k] += z[i * d + k];
    for (double& x : pooled) x /= static_cast<double>(cells);
    return pooled;
}

StyleVectors style_map(const StyleMapper& mapper, std::span<const double> pooled) {
    if (pooled.size() != mapper.code_dim())
        throw ValidationError("style: code width " + std::to_string(pooled.size()) +
                              " does not match mapper width " + std::to_string(mapper.code_dim()));
    StyleVectors out;
    out.reserve(mapper.maps.size());
    for (std::size_t l = 0; l < mapper.maps.size(); ++l)
        out.push_back(dense(mapper.maps[l], pooled, mapper.biases[l]));
    return out;
}

StyleVectors style_map(const StyleMapper& mapper, const Tensor& z) {
    return style_map(mapper, pool_features(z));
}

FieldMLP modulate_weights(const FieldMLP& mlp, const StyleVectors& style) {
    if (style.size() != mlp.weights.size())
        throw ValidationError("modulation: style count does not match layer count");
    FieldMLP out = mlp;
    for (std::size_t l = 0; l < out.weights.size(); ++l) {
        Matrix& w = out.weights[l];
        if (style[l].size() != w.cols())
            throw ValidationError("modulation: style " + std::to_string(l) + " has the wrong length");
        for (std::size_t r = 0; r < w.rows(); ++r) {
            auto row = w.row(r);
            double before = 0.0;
            double after = 0.0;
            for (std::size_t c = 0; c < row.size(); ++c) {
                before += row[c] * row[c];
                row[c] *= 1.0 + style[l][c];
                after += row[c] * row[c];
            }
            if (after == before || after == 0.0) continue;
            const double k = std::sqrt(before / after);
            for (double& x : row) x *= k;
        }
    }
    return out;
}

FieldSample field_eval(const FieldMLP& mlp, const Vec3& point, const Vec3& direction) {
    std::vector<double> x{point[0], point[1], point[2], direction[0], direction[1], direction[2]};
    const double slope = mlp.config.leaky_slope;
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
        x = dense(mlp.weights[l], x, mlp.biases[l]);
        for (double& v : x)
            if (v < 0.0) v *= slope;
    }
    std::vector<double> y = dense(mlp.head, x, mlp.head_bias);
    FieldSample s;
    s.density = softplus(y.back());
    y.pop_back();
    s.feature = std::move(y);
    return s;
}

std::vector<double> sample_depths(const Ray& ray, std::size_t samples, bool stratified,
                                  std::uint64_t seed) {
    if (samples < 2) throw ConfigError("render: samples must be >= 2");
    const double span = ray.far - ray.near;
    std::vector<double> u(samples);
    if (!stratified) {
        for (std::size_t i = 0; i < samples; ++i)
            u[i] = ray.near + span * static_cast<double>(i) / static_cast<double>(samples - 1);
        return u;
    }
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double bin = span / static_cast<double>(samples);
    for (std::size_t i = 0; i < samples; ++i)
        u[i] = ray.near + bin * (static_cast<double>(i) + unit(rng));
    return u;
}

std::vector<double> compositing_weights(std::span<const double> density,
                                        std::span<const double> delta) {
    if (density.size() != delta.size())
        throw ValidationError("compositing: density and interval counts differ");
    std::vector<double> w(density.size());
    double optical_depth = 0.0;
    for (std::size_t i = 0; i < density.size(); ++i) {
        const double step = density[i] * delta[i];
        w[i] = std::exp(-optical_depth) * -std::expm1(-step);
        optical_depth += step;
    }
    return w;
}

RayRender render_ray(const Field& field, const Ray& ray, const RenderConfig& config,
                     std::uint64_t ray_seed) {
    const auto u = sample_depths(ray, config.samples, config.stratified, ray_seed);
    const std::size_t n = u.size();
    std::vector<double> delta(n);
    for (std::size_t i = 0; i + 1 < n; ++i) delta[i] = u[i + 1] - u[i];
    delta[n - 1] = delta[n - 2];

    std::vector<FieldSample> samples;
    samples.reserve(n);
    std::vector<double> density(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 p{ray.origin[0] + u[i] * ray.direction[0], ray.origin[1] + u[i] * ray.direction[1],
                     ray.origin[2] + u[i] * ray.direction[2]};
        samples.push_back(field(p, ray.direction));
        density[i] = samples.back().density;
    }

    RayRender out;
    out.weights = compositing_weights(density, delta);
    out.feature.assign(samples.front().feature.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < out.feature.size(); ++k)
            out.feature[k] += out.weights[i] * samples[i].feature[k];
    return out;
}

RayRender render_ray(const FieldMLP& mlp, const Ray& ray, const RenderConfig& config,
                     std::uint64_t ray_seed) {
    return render_ray([&mlp](const Vec3& p, const Vec3& d) { return field_eval(mlp, p, d); }, ray,
                      config, ray_seed);
}

Tensor render_feature_volume(const Tensor& z, const CameraPose& pose, const FieldMLP& mlp,
                             const StyleMapper& mapper, const RenderConfig& config,
                             unsigned threads) {
    config.validate();
    mlp.validate();
    if (z.rank() != 4) throw ValidationError("feature volume must have rank 4 (t, h, w, d)");
    if (mlp.config.features != config.features)
        throw ConfigError("render: field feature width does not match the render config");

    // Per-frame pooled codes.
    const std::size_t frames_in = z.shape()[0];
    const std::size_t d_in = z.shape()[3];
    const std::size_t frame_cells = z.shape()[1] * z.shape()[2];
    std::vector<std::vector<double>> codes(frames_in, std::vector<double>(d_in, 0.0));
    for (std::size_t f = 0; f < frames_in; ++f) {
        for (std::size_t i = 0; i < frame_cells; ++i)
            for (std::size_t k = 0; k < d_in; ++k) codes[f][k] += z[(f * frame_cells + i) * d_in + k];
        for (double& x : codes[f]) x /= static_cast<double>(frame_cells);
    }

    const GridExtents grid = config.grid;
    std::vector<FieldMLP> fields;
    fields.reserve(grid.t);
    for (std::size_t k = 0; k < grid.t; ++k) {
        const double tau = grid.t > 1 ? static_cast<double>(k) * static_cast<double>(frames_in - 1) /
                                            static_cast<double>(grid.t - 1)
                                      : 0.0;
        const std::size_t lo = std::min(static_cast<std::size_t>(tau), frames_in - 1);
        const std::size_t hi = std::min(lo + 1, frames_in - 1);
        const double frac = tau - static_cast<double>(lo);
        std::vector<double> code(d_in);
        for (std::size_t j = 0; j < d_in; ++j)
            code[j] = frac == 0.0 ? codes[lo][j] : (1.0 - frac) * codes[lo][j] + frac * codes[hi][j];
        fields.push_back(modulate_weights(mlp, style_map(mapper, code)));
    }

    const auto rays = generate_rays(pose, grid.h, grid.w, config);
    const std::size_t d = config.features;
    const std::size_t total = grid.t * rays.size();
    std::vector<double> out(total * d);

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t frame = idx / rays.size();
            const auto r = render_ray(fields[frame], rays[idx % rays.size()], config,
                                      mix_seed(config.sampling_seed, idx));
            std::copy(r.feature.begin(), r.feature.end(), out.begin() + static_cast<std::ptrdiff_t>(idx * d));
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, total);
    if (n_threads == 1) {
        work(0, total);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (total + n_threads - 1) / n_threads;
        for (std::size_t b = 0; b < total; b += chunk) pool.emplace_back(work, b, std::min(total, b + chunk));
    }
    return Tensor({grid.t, grid.h, grid.w, d}, std::move(out));
}

}  // namespace mvdgw
