#include "mvdgw/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <type_traits>

#include "json.hpp"
#include "mvdgw/errors.hpp"
#include "mvdgw/io.hpp"

namespace mvdgw {

using json = nlohmann::json;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(section + ": expected a JSON object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.contains(key)) throw ConfigError(section + ": unknown key \"" + key + "\"");
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(std::string(key) + ": expected true or false");
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError(std::string(key) + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(std::string(key) + ": expected an integer");
    } else {
        if (!v.is_number()) throw ConfigError(std::string(key) + ": expected a number");
    }
    out = v.get<T>();
}

void read_vec3(const json& obj, const char* key, Vec3& out) {
    if (!obj.contains(key)) return;
    const auto& a = obj.at(key);
    if (!a.is_array() || a.size() != 3) throw ConfigError(std::string(key) + ": expected 3 numbers");
    for (std::size_t k = 0; k < 3; ++k) out[k] = a[k].get<double>();
}

SceneSpec scene_from_json(const json& j) {
    check_keys(j, "scene",
               {"blob_start", "blob_velocity", "blob_radius", "blob_amplitude", "blob_color",
                "frames", "height", "width", "camera_radius", "camera_center", "fov_degrees",
                "background", "noise", "seed"});
    SceneSpec s;
    read_vec3(j, "blob_start", s.blob_start);
    read_vec3(j, "blob_velocity", s.blob_velocity);
    read(j, "blob_radius", s.blob_radius);
    read(j, "blob_amplitude", s.blob_amplitude);
    read_vec3(j, "blob_color", s.blob_color);
    read(j, "frames", s.frames);
    read(j, "height", s.height);
    read(j, "width", s.width);
    read(j, "camera_radius", s.camera_radius);
    read_vec3(j, "camera_center", s.camera_center);
    read(j, "fov_degrees", s.fov_degrees);
    read(j, "background", s.background);
    read(j, "noise", s.noise);
    read(j, "seed", s.seed);
    s.validate();
    return s;
}

json transformer_to_json(const TransformerConfig& c) {
    return {{"blocks", c.blocks},   {"heads", c.heads},
            {"width", c.width},     {"mlp_hidden", c.mlp_hidden},
            {"patch", {c.patch.t, c.patch.h, c.patch.w}},
            {"classes", c.classes}, {"frames", c.frames},
            {"height", c.height},   {"video_width", c.video_width}};
}

TransformerConfig transformer_from_json(const json& j, bool with_video) {
    std::set<std::string> keys{"blocks", "heads", "width", "mlp_hidden", "patch", "classes"};
    if (with_video) keys.insert({"frames", "height", "video_width"});
    check_keys(j, "model", keys);
    TransformerConfig c;
    read(j, "blocks", c.blocks);
    read(j, "heads", c.heads);
    read(j, "width", c.width);
    read(j, "mlp_hidden", c.mlp_hidden);
    read(j, "classes", c.classes);
    if (j.contains("patch")) {
        const auto& p = j.at("patch");
        if (!p.is_array() || p.size() != 3) throw ConfigError("model.patch: expected [t, h, w]");
        c.patch = {p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<std::size_t>()};
    }
    read(j, "frames", c.frames);
    read(j, "height", c.height);
    read(j, "video_width", c.video_width);
    return c;
}

json field_to_json(const FieldConfig& f) {
    return {{"layers", f.layers}, {"width", f.width}, {"features", f.features},
            {"leaky_slope", f.leaky_slope}};
}

FieldConfig field_from_json(const json& j, bool with_features) {
    std::set<std::string> keys{"layers", "width", "leaky_slope"};
    if (with_features) keys.insert("features");
    check_keys(j, "field", keys);
    FieldConfig f;
    read(j, "layers", f.layers);
    read(j, "width", f.width);
    read(j, "leaky_slope", f.leaky_slope);
    read(j, "features", f.features);
    return f;
}

LogDomain log_domain_from_string(const std::string& s) {
    if (s == "auto") return LogDomain::Auto;
    if (s == "on") return LogDomain::On;
    if (s == "off") return LogDomain::Off;
    throw ConfigError("solver.log_domain must be auto, on or off");
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string format_array(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
    return out + "]";
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
}

}  // namespace

void SceneSpec::validate() const {
    if (frames < 1 || height < 1 || width < 1) throw ConfigError("scene: extents must be >= 1");
    if (!(blob_radius > 0.0) || !std::isfinite(blob_radius))
        throw ConfigError("scene: blob_radius must be positive");
    if (!(camera_radius > 0.0) || !std::isfinite(camera_radius))
        throw ConfigError("scene: camera_radius must be positive");
    if (!(fov_degrees > 0.0 && fov_degrees < 180.0)) throw ConfigError("scene: fov must lie in (0, 180)");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("scene: noise must be >= 0");
    for (const Vec3* v : {&blob_start, &blob_velocity, &blob_color, &camera_center})
        for (double x : *v)
            if (!std::isfinite(x)) throw ConfigError("scene: non-finite vector entry");
    if (!std::isfinite(blob_amplitude) || !std::isfinite(background))
        throw ConfigError("scene: non-finite level");
}

SynthResult synth_scene(const SceneSpec& spec, double beta_degrees) {
    spec.validate();
    const CameraPose pose = pose_from_angle(beta_degrees, spec.camera_center, spec.camera_radius);
    const Vec3 eye = pose.position();
    const double pitch = 2.0 * std::tan(spec.fov_degrees * std::numbers::pi / 360.0) /
                         static_cast<double>(std::max<std::size_t>(spec.width - 1, 1));
    const double cx = (static_cast<double>(spec.width) - 1.0) / 2.0;
    const double cy = (static_cast<double>(spec.height) - 1.0) / 2.0;

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> data(spec.frames * spec.height * spec.width * 3, spec.background);
    bool visible = false;
    for (std::size_t f = 0; f < spec.frames; ++f) {
        Vec3 rel{};
        for (std::size_t k = 0; k < 3; ++k)
            rel[k] = spec.blob_start[k] + static_cast<double>(f) * spec.blob_velocity[k] - eye[k];
        // Camera frame: R^T rel.
        Vec3 cam{};
        for (std::size_t c = 0; c < 3; ++c)
            cam[c] = pose.rotation(0, c) * rel[0] + pose.rotation(1, c) * rel[1] + pose.rotation(2, c) * rel[2];
        const double depth = -cam[2];
        if (depth <= 1e-9) continue;
        const double u = cx + cam[0] / depth / pitch;
        const double v = cy - cam[1] / depth / pitch;
        const double sigma = spec.blob_radius / depth / pitch;
        if (u >= -0.5 && u <= static_cast<double>(spec.width) - 0.5 && v >= -0.5 &&
            v <= static_cast<double>(spec.height) - 0.5)
            visible = true;
        for (std::size_t r = 0; r < spec.height; ++r) {
            for (std::size_t c = 0; c < spec.width; ++c) {
                const double dx = static_cast<double>(c) - u;
                const double dy = static_cast<double>(r) - v;
                const double g = spec.blob_amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                const std::size_t base = ((f * spec.height + r) * spec.width + c) * 3;
                for (std::size_t ch = 0; ch < 3; ++ch) data[base + ch] += g * spec.blob_color[ch];
            }
        }
    }
    if (spec.noise > 0.0)
        for (double& x : data) x += spec.noise * gauss(rng);
    return {Tensor({spec.frames, spec.height, spec.width, 3}, std::move(data)), visible};
}

void LossWeights::validate() const {
    if (!(lambda_cls >= 0.0) || !std::isfinite(lambda_cls) || !(lambda_dgw >= 0.0) ||
        !std::isfinite(lambda_dgw))
        throw ConfigError("loss weights must be finite and non-negative");
}

void PipelineConfig::finalize() {
    scene.validate();
    model.frames = scene.frames;
    model.height = scene.height;
    model.video_width = scene.width;
    model.validate();
    field.features = model.width;
    field.validate();
    render.grid = model.token_grid();
    render.features = model.width;
    render.fov_degrees = scene.fov_degrees;
    render.validate();
    solver.validate();
    loss.validate();
    if (!(scales.t > 0.0 && scales.h > 0.0 && scales.w > 0.0))
        throw ConfigError("scales must be positive");
    if (!(beta_min <= beta_max)) throw ConfigError("beta_range must be [min, max] with min <= max");
}

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    const json root = parse_json(json_text);
    if (!root.is_object()) throw ConfigError("pipeline config must be a JSON object");
    static const std::set<std::string> sections{"scene",  "model", "field",  "render",
                                                "solver", "loss",  "scales", "beta_range"};
    bool sectioned = false;
    for (const auto& [key, _] : root.items()) sectioned |= sections.contains(key);

    PipelineConfig c;
    try {
        if (!sectioned) {
            c.scene = scene_from_json(root);
        } else {
            check_keys(root, "config", sections);
            if (root.contains("scene")) c.scene = scene_from_json(root.at("scene"));
            if (root.contains("model")) c.model = transformer_from_json(root.at("model"), false);
            if (root.contains("field")) c.field = field_from_json(root.at("field"), false);
            if (root.contains("solver")) {
                const auto& j = root.at("solver");
                check_keys(j, "solver", {"epsilon", "sinkhorn_tol", "sinkhorn_max_iters", "outer_tol",
                                         "outer_max_iters", "log_domain"});
                read(j, "epsilon", c.solver.epsilon);
                read(j, "sinkhorn_tol", c.solver.sinkhorn_tol);
                read(j, "sinkhorn_max_iters", c.solver.sinkhorn_max_iters);
                read(j, "outer_tol", c.solver.outer_tol);
                read(j, "outer_max_iters", c.solver.outer_max_iters);
                if (j.contains("log_domain"))
                    c.solver.log_domain = log_domain_from_string(j.at("log_domain").get<std::string>());
            }
            if (root.contains("loss")) {
                const auto& j = root.at("loss");
                check_keys(j, "loss", {"lambda_cls", "lambda_dgw"});
                read(j, "lambda_cls", c.loss.lambda_cls);
                read(j, "lambda_dgw", c.loss.lambda_dgw);
            }
            if (root.contains("scales")) {
                const auto& j = root.at("scales");
                check_keys(j, "scales", {"t", "h", "w"});
                read(j, "t", c.scales.t);
                read(j, "h", c.scales.h);
                read(j, "w", c.scales.w);
            }
            if (root.contains("beta_range")) {
                const auto& j = root.at("beta_range");
                if (!j.is_array() || j.size() != 2) throw ConfigError("beta_range: expected [min, max]");
                c.beta_min = j[0].get<double>();
                c.beta_max = j[1].get<double>();
            }
        }
        c.render.near = 0.1 * c.scene.camera_radius;
        c.render.far = 2.0 * c.scene.camera_radius;
        if (sectioned && root.contains("render")) {
            const auto& j = root.at("render");
            check_keys(j, "render", {"samples", "near", "far", "stratified", "sampling_seed"});
            read(j, "samples", c.render.samples);
            read(j, "near", c.render.near);
            read(j, "far", c.render.far);
            read(j, "stratified", c.render.stratified);
            read(j, "sampling_seed", c.render.sampling_seed);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.finalize();
    return c;
}

SceneSpec parse_scene_spec(const std::string& json_text) {
    try {
        return scene_from_json(parse_json(json_text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("scene: ") + e.what());
    }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    return parse_pipeline_config(read_text(path));
}

SceneSpec load_scene_spec(const std::filesystem::path& path) { return parse_scene_spec(read_text(path)); }

Model Model::init(const TransformerConfig& transformer, const FieldConfig& field, std::uint64_t seed) {
    Model m;
    m.transformer = transformer;
    m.field = field;
    m.field.features = transformer.width;
    m.weights = ModelWeights::init(transformer, derive_seed(seed, 0));
    m.mlp = FieldMLP::init(m.field, derive_seed(seed, 1));
    m.mapper = StyleMapper::init(m.field, transformer.width, derive_seed(seed, 2));
    return m;
}

void Model::validate() const {
    weights.validate();
    mlp.validate();
    if (field.features != transformer.width)
        throw ConfigError("field feature width must equal the transformer width");
    if (mapper.maps.size() != field.layers || mapper.code_dim() != transformer.width)
        throw ConfigError("style mapper does not match the field");
    for (std::size_t l = 0; l < field.layers; ++l)
        if (mapper.maps[l].rows() != field.input_dim(l) || mapper.biases[l].size() != field.input_dim(l))
            throw ConfigError("style mapper layer " + std::to_string(l) + " has the wrong shape");
}

namespace {

std::vector<std::pair<std::string, Tensor>> named_tensors(const Model& m) {
    std::vector<std::pair<std::string, Tensor>> out;
    const auto mat = [&](const std::string& n, const Matrix& x) { out.emplace_back(n, matrix_to_tensor(x)); };
    const auto vec = [&](const std::string& n, const std::vector<double>& x) {
        out.emplace_back(n, vector_to_tensor(x));
    };
    const auto& w = m.weights;
    mat("patch_projection", w.patch_projection);
    vec("patch_bias", w.patch_bias);
    mat("positional", w.positional);
    for (std::size_t b = 0; b < w.blocks.size(); ++b) {
        const auto& blk = w.blocks[b];
        const std::string p = "block" + std::to_string(b) + ".";
        vec(p + "ln1_gain", blk.ln1_gain);
        vec(p + "ln1_bias", blk.ln1_bias);
        for (std::size_t a = 0; a < blk.heads.size(); ++a) {
            const std::string h = p + "head" + std::to_string(a) + ".";
            mat(h + "query", blk.heads[a].query);
            mat(h + "key", blk.heads[a].key);
            mat(h + "value", blk.heads[a].value);
        }
        mat(p + "output", blk.output);
        vec(p + "ln2_gain", blk.ln2_gain);
        vec(p + "ln2_bias", blk.ln2_bias);
        mat(p + "mlp_in", blk.mlp_in);
        vec(p + "mlp_in_bias", blk.mlp_in_bias);
        mat(p + "mlp_out", blk.mlp_out);
        vec(p + "mlp_out_bias", blk.mlp_out_bias);
    }
    mat("classifier", w.classifier);
    vec("classifier_bias", w.classifier_bias);
    for (std::size_t l = 0; l < m.mlp.weights.size(); ++l) {
        mat("field.layer" + std::to_string(l) + ".weight", m.mlp.weights[l]);
        vec("field.layer" + std::to_string(l) + ".bias", m.mlp.biases[l]);
    }
    mat("field.head", m.mlp.head);
    vec("field.head_bias", m.mlp.head_bias);
    for (std::size_t l = 0; l < m.mapper.maps.size(); ++l) {
        mat("style.layer" + std::to_string(l) + ".map", m.mapper.maps[l]);
        vec("style.layer" + std::to_string(l) + ".bias", m.mapper.biases[l]);
    }
    return out;
}

}  // namespace

void save_model(const std::filesystem::path& dir, const Model& model) {
    model.validate();
    std::filesystem::create_directories(dir);
    json manifest = json::object();
    manifest["format"] = "mvdgw-weights";
    manifest["version"] = 1;
    manifest["transformer"] = transformer_to_json(model.transformer);
    manifest["field"] = field_to_json(model.field);
    json tensors = json::array();
    for (const auto& [name, tensor] : named_tensors(model)) {
        const std::string file = name + ".dgwt";
        write_tensor(dir / file, tensor);
        tensors.push_back({{"name", name}, {"file", file}, {"shape", tensor.shape()}});
    }
    manifest["tensors"] = std::move(tensors);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

Model load_model(const std::filesystem::path& dir) {
    const json manifest = parse_json(read_text(dir / "manifest.json"));
    Model m;
    std::map<std::string, Tensor> tensors;
    try {
        check_keys(manifest, "manifest", {"format", "version", "transformer", "field", "tensors"});
        if (manifest.value("format", "") != "mvdgw-weights" || manifest.value("version", 0) != 1)
            throw ConfigError("manifest: unsupported format");
        m.transformer = transformer_from_json(manifest.at("transformer"), true);
        m.field = field_from_json(manifest.at("field"), true);
        for (const auto& entry : manifest.at("tensors")) {
            const auto name = entry.at("name").get<std::string>();
            const auto file = entry.at("file").get<std::string>();
            if (std::filesystem::path(file).has_parent_path())
                throw ConfigError("manifest: tensor file must be a plain file name");
            tensors.emplace(name, read_tensor(dir / file));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }

    // Build a model of the right shape, then overwrite every tensor.
    Model shaped = Model::init(m.transformer, m.field, 0);
    const auto take = [&](const std::string& name) -> const Tensor& {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw ConfigError("manifest: missing tensor " + name);
        return it->second;
    };
    const auto mat = [&](const std::string& n, Matrix& x) { x = tensor_to_matrix(take(n)); };
    const auto vec = [&](const std::string& n, std::vector<double>& x) { x = tensor_to_vector(take(n)); };
    auto& w = shaped.weights;
    mat("patch_projection", w.patch_projection);
    vec("patch_bias", w.patch_bias);
    mat("positional", w.positional);
    for (std::size_t b = 0; b < w.blocks.size(); ++b) {
        auto& blk = w.blocks[b];
        const std::string p = "block" + std::to_string(b) + ".";
        vec(p + "ln1_gain", blk.ln1_gain);
        vec(p + "ln1_bias", blk.ln1_bias);
        for (std::size_t a = 0; a < blk.heads.size(); ++a) {
            const std::string h = p + "head" + std::to_string(a) + ".";
            mat(h + "query", blk.heads[a].query);
            mat(h + "key", blk.heads[a].key);
            mat(h + "value", blk.heads[a].value);
        }
        mat(p + "output", blk.output);
        vec(p + "ln2_gain", blk.ln2_gain);
        vec(p + "ln2_bias", blk.ln2_bias);
        mat(p + "mlp_in", blk.mlp_in);
        vec(p + "mlp_in_bias", blk.mlp_in_bias);
        mat(p + "mlp_out", blk.mlp_out);
        vec(p + "mlp_out_bias", blk.mlp_out_bias);
    }
    mat("classifier", w.classifier);
    vec("classifier_bias", w.classifier_bias);
    for (std::size_t l = 0; l < shaped.mlp.weights.size(); ++l) {
        mat("field.layer" + std::to_string(l) + ".weight", shaped.mlp.weights[l]);
        vec("field.layer" + std::to_string(l) + ".bias", shaped.mlp.biases[l]);
    }
    mat("field.head", shaped.mlp.head);
    vec("field.head_bias", shaped.mlp.head_bias);
    for (std::size_t l = 0; l < shaped.mapper.maps.size(); ++l) {
        mat("style.layer" + std::to_string(l) + ".map", shaped.mapper.maps[l]);
        vec("style.layer" + std::to_string(l) + ".bias", shaped.mapper.biases[l]);
    }
    shaped.validate();
    return shaped;
}

Tensor tokens_to_volume(const Matrix& z, GridExtents grid) {
    if (z.rows() != grid.size())
        throw ValidationError("token count " + std::to_string(z.rows()) + " does not match grid size " +
                              std::to_string(grid.size()));
    return Tensor({grid.t, grid.h, grid.w, z.cols()}, z.values());
}

Matrix volume_to_tokens(const Tensor& volume) {
    if (volume.rank() != 4) throw ValidationError("feature volume must have rank 4 (t, h, w, d)");
    const auto& s = volume.shape();
    return Matrix(s[0] * s[1] * s[2], s[3], volume.values());
}

ForwardResult forward(const Tensor& video, double beta_degrees, const Model& model,
                      const PipelineConfig& config, unsigned threads) {
    const auto& w = model.weights;
    const GridExtents grid = w.config.token_grid();
    Matrix z = patch_embed(video, w);
    for (std::size_t b = 0; b + 1 < w.blocks.size(); ++b) z = encoder_block(z, w.blocks[b]).z;

    RenderConfig render = config.render;
    render.grid = grid;
    render.features = w.config.width;
    const CameraPose pose =
        pose_from_angle(beta_degrees, config.scene.camera_center, config.scene.camera_radius);
    const Tensor rendered =
        render_feature_volume(tokens_to_volume(z, grid), pose, model.mlp, model.mapper, render, threads);

    const BlockOutput last = encoder_block(volume_to_tokens(rendered), w.blocks.back());
    return {classify(last.z, w.classifier, w.classifier_bias),
            extract_attention_volumes(last.attention, grid)};
}

ConsistencyResult pairwise_consistency(const Tensor& video, double beta1, double beta2,
                                       const Model& model, const PipelineConfig& config,
                                       unsigned threads) {
    for (double b : {beta1, beta2})
        if (!(b >= config.beta_min && b <= config.beta_max))
            throw ValidationError("camera angle " + format_double(b) + " outside [" +
                                  format_double(config.beta_min) + ", " + format_double(config.beta_max) + "]");
    threads = std::max(threads, 1u);

    ConsistencyResult out;
    if (threads > 1) {
        auto second = std::async(std::launch::async, [&] {
            return forward(video, beta2, model, config, std::max(threads / 2, 1u));
        });
        out.view1 = forward(video, beta1, model, config, std::max(threads - threads / 2, 1u));
        out.view2 = second.get();
    } else {
        out.view1 = forward(video, beta1, model, config, 1);
        out.view2 = forward(video, beta2, model, config, 1);
    }

    const std::size_t heads = out.view1.volumes.size();
    out.per_head.assign(heads, 0.0);
    std::vector<char> converged(heads, 0);
    const auto solve = [&](std::size_t a) {
        const auto r = dgw_consistency(out.view1.volumes[a], out.view2.volumes[a], config.solver, config.scales);
        out.per_head[a] = r.value;
        converged[a] = r.converged;
    };
    const std::size_t n_threads = std::min<std::size_t>(threads, heads);
    if (n_threads <= 1) {
        for (std::size_t a = 0; a < heads; ++a) solve(a);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t a = t; a < heads; a += n_threads) solve(a);
            });
    }
    double sum = 0.0;
    for (double v : out.per_head) sum += v;
    out.mean = sum / static_cast<double>(heads);
    out.converged.assign(converged.begin(), converged.end());
    return out;
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size())
        throw ValidationError("label " + std::to_string(label) + " out of range for " +
                              std::to_string(logits.size()) + " classes");
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double s = 0.0;
    for (double x : logits) s += std::exp(x - m);
    return m + std::log(s) - logits[label];
}

LossBreakdown total_loss(std::span<const double> logits, std::size_t label, double mean_dgw,
                         const LossWeights& weights) {
    weights.validate();
    LossBreakdown out;
    out.ce = cross_entropy(logits, label);
    out.total = weights.lambda_cls * out.ce + weights.lambda_dgw * mean_dgw;
    return out;
}

std::string RunReport::to_json() const {
    std::string s = "{\n";
    const auto field = [&](const char* key, const std::string& value, bool last = false) {
        s += "  \"" + std::string(key) + "\": " + value + (last ? "\n" : ",\n");
    };
    std::string flags = "[";
    for (std::size_t i = 0; i < converged.size(); ++i) flags += std::string(i ? ", " : "") + (converged[i] ? "true" : "false");
    flags += "]";
    field("beta1", format_double(beta1));
    field("beta2", format_double(beta2));
    field("label", std::to_string(label));
    field("logits_view1", format_array(logits_view1));
    field("logits_view2", format_array(logits_view2));
    field("dgw_per_head", format_array(dgw_per_head));
    field("converged", flags);
    field("mean_dgw", format_double(mean_dgw));
    field("ce", format_double(ce));
    field("lambda_cls", format_double(lambda_cls));
    field("lambda_dgw", format_double(lambda_dgw));
    field("total", format_double(total));
    field("blob_visible", blob_visible ? "true" : "false", !include_timings);
    if (include_timings) {
        field("seconds_setup", format_double(seconds_setup));
        field("seconds_consistency", format_double(seconds_consistency), true);
    }
    return s + "}\n";
}

RunReport run_pipeline(const PipelineConfig& config, double beta1, double beta2, std::size_t label,
                       const PipelineOptions& options) {
    PipelineConfig cfg = config;
    cfg.finalize();
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();

    const SynthResult scene = synth_scene(cfg.scene, 0.0);
    const Model model = Model::init(cfg.model, cfg.field, options.seed);
    const auto t1 = clock::now();
    const ConsistencyResult c = pairwise_consistency(scene.video, beta1, beta2, model, cfg, options.threads);
    const auto t2 = clock::now();

    RunReport r;
    r.beta1 = beta1;
    r.beta2 = beta2;
    r.label = label;
    r.logits_view1 = c.view1.logits;
    r.logits_view2 = c.view2.logits;
    r.dgw_per_head = c.per_head;
    r.converged = c.converged;
    r.mean_dgw = c.mean;
    r.ce = 0.5 * (cross_entropy(c.view1.logits, label) + cross_entropy(c.view2.logits, label));
    r.lambda_cls = cfg.loss.lambda_cls;
    r.lambda_dgw = cfg.loss.lambda_dgw;
    r.total = r.lambda_cls * r.ce + r.lambda_dgw * r.mean_dgw;
    r.blob_visible = scene.blob_visible;
    r.include_timings = options.timings;
    r.seconds_setup = std::chrono::duration<double>(t1 - t0).count();
    r.seconds_consistency = std::chrono::duration<double>(t2 - t1).count();
    return r;
}

}  // namespace mvdgw
