#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mvdgw/errors.hpp"
#include "mvdgw/gw.hpp"
#include "mvdgw/io.hpp"
#include "mvdgw/pipeline.hpp"
#include "mvdgw/renderer.hpp"

namespace py = pybind11;
using namespace mvdgw;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Array to_array(const Matrix& m) { return to_array(matrix_to_tensor(m)); }

Array to_array(std::span<const double> v) { return to_array(vector_to_tensor(v)); }

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw ValidationError("expected a 2-d array");
    return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<double> to_vector(const Array& a) {
    if (a.ndim() != 1) throw ValidationError("expected a 1-d array");
    return {a.data(), a.data() + a.size()};
}

SolverConfig solver_config(double epsilon, const std::string& log_domain, int sinkhorn_max_iters,
                           int outer_max_iters) {
    SolverConfig s;
    s.epsilon = epsilon;
    s.sinkhorn_max_iters = sinkhorn_max_iters;
    s.outer_max_iters = outer_max_iters;
    if (log_domain == "on") {
        s.log_domain = LogDomain::On;
    } else if (log_domain == "off") {
        s.log_domain = LogDomain::Off;
    } else if (log_domain != "auto") {
        throw ConfigError("log_domain must be auto, on or off");
    }
    s.validate();
    return s;
}

py::dict discrepancy_dict(const DiscrepancyResult& r) {
    py::dict d;
    d["value"] = r.value;
    d["regularized_value"] = r.regularized_value;
    d["coupling"] = to_array(r.coupling.plan());
    d["outer_iterations"] = r.outer_iterations;
    d["converged"] = r.converged;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Directed Gromov-Wasserstein attention consistency";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<BoundsError>(m, "BoundsError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());

    m.def("flatten_index", [](std::size_t t, std::size_t h, std::size_t w, std::array<std::size_t, 3> grid) {
        return flatten_index({t, h, w}, {grid[0], grid[1], grid[2]});
    }, py::arg("t"), py::arg("h"), py::arg("w"), py::arg("grid"));

    m.def("normalize_attention", [](const Array& volume) {
        const auto p = normalize_attention(AttentionVolume(to_tensor(volume)));
        return to_array(p.values());
    }, py::arg("volume"));

    m.def("cosine_loss", [](std::array<double, 3> u, std::array<double, 3> v) { return cosine_loss(u, v); });

    m.def("sinkhorn", [](const Array& cost, const Array& p, const Array& q, double epsilon,
                         const std::string& log_domain, int max_iters) {
        const auto s = solver_config(epsilon, log_domain, max_iters, 50);
        const auto r = sinkhorn(to_matrix(cost), ProbabilityVector(to_vector(p)), ProbabilityVector(to_vector(q)), s);
        py::dict d;
        d["plan"] = to_array(r.coupling.plan());
        d["iterations"] = r.iterations;
        d["residual"] = r.residual;
        d["converged"] = r.converged;
        return d;
    }, py::arg("cost"), py::arg("p"), py::arg("q"), py::arg("epsilon") = 0.05,
       py::arg("log_domain") = "auto", py::arg("max_iters") = 1000);

    m.def("solve_gw", [](const Array& d1, const Array& d2, const Array& p, const Array& q, double epsilon,
                         const std::string& log_domain) {
        const auto s = solver_config(epsilon, log_domain, 1000, 50);
        return discrepancy_dict(solve_gw(DistanceMatrix(to_matrix(d1)), DistanceMatrix(to_matrix(d2)),
                                         ProbabilityVector(to_vector(p)), ProbabilityVector(to_vector(q)), s));
    }, py::arg("d1"), py::arg("d2"), py::arg("p"), py::arg("q"), py::arg("epsilon") = 0.05,
       py::arg("log_domain") = "auto");

    m.def("dgw", [](const Array& a, const Array& b, double epsilon, std::array<double, 3> scales,
                    const std::string& loss, const std::string& log_domain) {
        const auto s = solver_config(epsilon, log_domain, 1000, 50);
        const AttentionVolume va(to_tensor(a));
        const AttentionVolume vb(to_tensor(b));
        const AxisScales sc{scales[0], scales[1], scales[2]};
        if (loss == "cosine") return discrepancy_dict(dgw_consistency(va, vb, s, sc));
        if (loss == "l2") return discrepancy_dict(gw_consistency(va, vb, s, sc));
        throw ConfigError("loss must be cosine or l2");
    }, py::arg("a"), py::arg("b"), py::arg("epsilon") = 0.05, py::arg("scales") = std::array<double, 3>{1, 1, 1},
       py::arg("loss") = "cosine", py::arg("log_domain") = "auto");

    m.def("pose_from_angle", [](double beta, std::array<double, 3> center, double radius) {
        return to_array(pose_from_angle(beta, center, radius).extrinsics());
    }, py::arg("beta"), py::arg("center") = std::array<double, 3>{0, 0, 0}, py::arg("radius") = 2.0);

    m.def("render", [](const Array& feature, double beta, std::size_t samples, std::uint64_t seed, unsigned threads) {
        const Tensor z = to_tensor(feature);
        if (z.rank() != 4) throw ValidationError("feature volume must have rank 4 (t, h, w, d)");
        const auto& s = z.shape();
        RenderConfig rc;
        rc.samples = samples;
        rc.grid = {s[0], s[1], s[2]};
        rc.features = s[3];
        FieldConfig fc;
        fc.features = s[3];
        const auto mlp = FieldMLP::init(fc, seed);
        const auto mapper = StyleMapper::init(fc, s[3], seed + 1);
        Tensor out;
        {
            py::gil_scoped_release release;
            out = render_feature_volume(z, pose_from_angle(beta), mlp, mapper, rc, threads);
        }
        return to_array(out);
    }, py::arg("feature"), py::arg("beta"), py::arg("samples") = 64, py::arg("seed") = 0, py::arg("threads") = 1);

    m.def("synth_scene", [](const std::string& spec_json, double beta) {
        const auto r = synth_scene(parse_scene_spec(spec_json), beta);
        return py::make_tuple(to_array(r.video), r.blob_visible);
    }, py::arg("spec_json") = "{}", py::arg("beta") = 0.0);

    m.def("run_pipeline", [](const std::string& config_json, double beta1, double beta2, std::size_t label,
                             std::uint64_t seed, unsigned threads) {
        const auto cfg = parse_pipeline_config(config_json);
        RunReport r;
        {
            py::gil_scoped_release release;
            r = run_pipeline(cfg, beta1, beta2, label, {seed, threads, false});
        }
        return r.to_json();
    }, py::arg("config_json") = "{}", py::arg("beta1") = -10.0, py::arg("beta2") = 10.0, py::arg("label") = 0,
       py::arg("seed") = 0, py::arg("threads") = 1);

    m.def("cross_entropy", [](const Array& logits, std::size_t label) {
        return cross_entropy(to_vector(logits), label);
    }, py::arg("logits"), py::arg("label"));

    m.def("read_tensor", [](const std::string& path) { return to_array(read_tensor(path)); });
    m.def("write_tensor", [](const std::string& path, const Array& a) { write_tensor(path, to_tensor(a)); });
}
