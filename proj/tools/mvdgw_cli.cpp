// Command-line front end: synth, attend, dgw, render, pipeline, init-weights.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mvdgw/errors.hpp"
#include "mvdgw/gw.hpp"
#include "mvdgw/io.hpp"
#include "mvdgw/pipeline.hpp"
#include "mvdgw/renderer.hpp"

using namespace mvdgw;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
}

PipelineConfig config_or_default(const std::string& path) {
    if (path.empty()) {
        PipelineConfig c;
        c.finalize();
        return c;
    }
    return load_pipeline_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-view attention consistency via directed Gromov-Wasserstein"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Seed for model weights and sampling")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
    app.fallthrough();

    // synth
    auto* synth = app.add_subcommand("synth", "Render a synthetic scene video to a DGWT file");
    std::string synth_spec, synth_out;
    double synth_beta = 0.0;
    synth->add_option("--spec", synth_spec, "Scene JSON")->required()->check(CLI::ExistingFile);
    synth->add_option("--beta", synth_beta, "Camera angle in degrees")->required();
    synth->add_option("--out", synth_out, "Output video (T, H, W, 3)")->required();

    // attend
    auto* attend = app.add_subcommand("attend", "Forward a video and write attention volumes and logits");
    std::string attend_video, attend_weights, attend_attn, attend_logits, attend_config;
    double attend_beta = 0.0;
    attend->add_option("--video", attend_video, "Input video DGWT")->required()->check(CLI::ExistingFile);
    attend->add_option("--beta", attend_beta, "Camera angle in degrees")->required();
    attend->add_option("--weights", attend_weights, "Weights directory")->required()->check(CLI::ExistingDirectory);
    attend->add_option("--out-attn", attend_attn, "Directory for head<i>.dgwt volumes")->required();
    attend->add_option("--out-logits", attend_logits, "Output logits DGWT")->required();
    attend->add_option("--config", attend_config, "Pipeline JSON for camera and render settings");

    // dgw
    auto* dgw = app.add_subcommand("dgw", "Discrepancy between two attention volumes");
    std::string dgw_a, dgw_b, dgw_loss = "cosine", dgw_log = "auto", dgw_coupling;
    SolverConfig solver;
    AxisScales scales;
    dgw->add_option("--a", dgw_a, "First volume (t, h, w)")->required()->check(CLI::ExistingFile);
    dgw->add_option("--b", dgw_b, "Second volume (t, h, w)")->required()->check(CLI::ExistingFile);
    dgw->add_option("--epsilon", solver.epsilon, "Entropic regularisation")->capture_default_str();
    dgw->add_option("--scale-t", scales.t)->capture_default_str();
    dgw->add_option("--scale-h", scales.h)->capture_default_str();
    dgw->add_option("--scale-w", scales.w)->capture_default_str();
    dgw->add_option("--loss", dgw_loss, "cosine (directed) or l2 (distances)")
        ->check(CLI::IsMember({"cosine", "l2"}))
        ->capture_default_str();
    dgw->add_option("--log-domain", dgw_log)->check(CLI::IsMember({"auto", "on", "off"}))->capture_default_str();
    dgw->add_option("--out-coupling", dgw_coupling, "Write the coupling matrix");

    // render
    auto* render = app.add_subcommand("render", "Render a feature volume from a camera angle");
    std::string render_feature, render_out, render_weights, render_config;
    double render_beta = 0.0;
    std::size_t render_samples = 64;
    render->add_option("--feature", render_feature, "Feature volume (t, h, w, d)")->required()->check(CLI::ExistingFile);
    render->add_option("--beta", render_beta, "Camera angle in degrees")->required();
    render->add_option("--samples", render_samples, "Samples per ray")->capture_default_str();
    render->add_option("--out", render_out, "Output volume")->required();
    render->add_option("--weights", render_weights, "Weights directory (field and style maps)")
        ->check(CLI::ExistingDirectory);
    render->add_option("--config", render_config, "Pipeline JSON for camera and render settings");

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "End-to-end two-view consistency and total loss");
    std::string pipe_spec, pipe_report;
    double beta1 = 0.0, beta2 = 0.0;
    std::size_t label = 0;
    bool timings = false;
    pipe->add_option("--spec", pipe_spec, "Pipeline or scene JSON")->required()->check(CLI::ExistingFile);
    pipe->add_option("--beta1", beta1)->required();
    pipe->add_option("--beta2", beta2)->required();
    pipe->add_option("--label", label)->required();
    pipe->add_option("--report", pipe_report, "Output report JSON")->required();
    pipe->add_flag("--timings", timings, "Include wall-clock timings in the report");

    // init-weights
    auto* init = app.add_subcommand("init-weights", "Write a seeded weights directory");
    std::string init_out, init_config;
    init->add_option("--out", init_out, "Output directory")->required();
    init->add_option("--config", init_config, "Pipeline JSON for model and field sizes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            const auto r = synth_scene(load_scene_spec(synth_spec), synth_beta);
            if (!r.blob_visible) std::cerr << "warning: blob is outside every frame\n";
            write_tensor(synth_out, r.video);
        } else if (*attend) {
            auto cfg = config_or_default(attend_config);
            const Model model = load_model(attend_weights);
            const Tensor video = read_tensor(attend_video);
            if (video.rank() != 4) throw ValidationError("video must be a (T, H, W, 3) tensor");
            cfg.model = model.transformer;
            const auto out = forward(video, attend_beta, model, cfg, g.threads);
            fs::create_directories(attend_attn);
            for (std::size_t a = 0; a < out.volumes.size(); ++a)
                write_tensor(fs::path(attend_attn) / ("head" + std::to_string(a) + ".dgwt"),
                             out.volumes[a].to_tensor());
            write_tensor(attend_logits, vector_to_tensor(out.logits));
        } else if (*dgw) {
            solver.log_domain = dgw_log == "on" ? LogDomain::On : dgw_log == "off" ? LogDomain::Off : LogDomain::Auto;
            solver.validate();
            const AttentionVolume a(read_tensor(dgw_a));
            const AttentionVolume b(read_tensor(dgw_b));
            const auto r = dgw_loss == "cosine" ? dgw_consistency(a, b, solver, scales)
                                                : gw_consistency(a, b, solver, scales);
            std::printf("%.17g\n", r.value);
            if (!r.converged) std::cerr << "warning: solver did not converge\n";
            if (!dgw_coupling.empty()) write_tensor(dgw_coupling, matrix_to_tensor(r.coupling.plan()));
        } else if (*render) {
            auto cfg = config_or_default(render_config);
            const Tensor z = read_tensor(render_feature);
            if (z.rank() != 4) throw ValidationError("feature volume must have rank 4 (t, h, w, d)");
            const auto& s = z.shape();
            RenderConfig rc = cfg.render;
            rc.samples = render_samples;
            rc.grid = {s[0], s[1], s[2]};
            rc.features = s[3];
            FieldMLP mlp;
            StyleMapper mapper;
            if (!render_weights.empty()) {
                const Model model = load_model(render_weights);
                mlp = model.mlp;
                mapper = model.mapper;
            } else {
                FieldConfig fc = cfg.field;
                fc.features = s[3];
                mlp = FieldMLP::init(fc, g.seed);
                mapper = StyleMapper::init(fc, s[3], g.seed + 1);
            }
            const auto pose = pose_from_angle(render_beta, cfg.scene.camera_center, cfg.scene.camera_radius);
            write_tensor(render_out, render_feature_volume(z, pose, mlp, mapper, rc, g.threads));
        } else if (*pipe) {
            const auto cfg = load_pipeline_config(pipe_spec);
            const auto report = run_pipeline(cfg, beta1, beta2, label, {g.seed, g.threads, timings});
            if (!report.blob_visible) std::cerr << "warning: blob is outside every frame\n";
            write_text(pipe_report, report.to_json());
        } else if (*init) {
            const auto cfg = config_or_default(init_config);
            save_model(init_out, Model::init(cfg.model, cfg.field, g.seed));
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
