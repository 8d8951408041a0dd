// Python bindings. Reports cross the boundary as JSON text; the python
// package decodes them.

#include "omm/cli.hpp"
#include "omm/data_io.hpp"
#include "omm/reports.hpp"
#include "omm/simulation.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace omm;

namespace {

py::array_t<std::int64_t> counts_array(const CountPanel& c) {
    py::array_t<std::int64_t> a({c.platforms(), c.opinions(), c.bins()});
    auto v = a.mutable_unchecked<3>();
    for (int p = 0; p < c.platforms(); ++p)
        for (int i = 0; i < c.opinions(); ++i)
            for (int b = 0; b < c.bins(); ++b) v(p, i, b) = c.at(p, i, b);
    return a;
}

Matrix matrix_of(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-d array");
    Matrix m({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
    auto v = a.unchecked<2>();
    for (py::ssize_t r = 0; r < a.shape(0); ++r)
        for (py::ssize_t c = 0; c < a.shape(1); ++c) m(r, c) = v(r, c);
    return m;
}

const CountPanel& sample_of(const DatasetBundle& d, int s) {
    if (s < 0 || s >= static_cast<int>(d.samples.size()))
        throw std::invalid_argument("sample " + std::to_string(s) + " out of range");
    return d.samples[s];
}

int resolve_k(const py::object& k, const std::vector<std::string>& names) {
    if (py::isinstance<py::int_>(k)) return k.cast<int>();
    const auto s = k.cast<std::string>();
    const auto it = std::find(names.begin(), names.end(), s);
    if (it == names.end()) throw std::invalid_argument("unknown intervention '" + s + "'");
    return static_cast<int>(it - names.begin());
}

}  // namespace

PYBIND11_MODULE(_omm, m) {
    m.doc() = "Opinion market model core";
    auto data_error = py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    (void)data_error;

    py::class_<DatasetBundle>(m, "Dataset")
        .def_readonly("platforms", &DatasetBundle::platforms)
        .def_readonly("opinions", &DatasetBundle::opinions)
        .def_readonly("interventions", &DatasetBundle::interventions)
        .def_readonly("bin_width", &DatasetBundle::bin_width)
        .def_property_readonly("bins", [](const DatasetBundle& d) { return d.signals.bins(); })
        .def_property_readonly("n_samples", [](const DatasetBundle& d) { return d.samples.size(); })
        .def("counts", [](const DatasetBundle& d, int s) { return counts_array(sample_of(d, s)); }, py::arg("sample") = 0)
        .def("save", [](const DatasetBundle& d, const std::string& dir) { save_dataset(d, dir); }, py::arg("path"));

    py::class_<ModelFile>(m, "Model")
        .def_property_readonly("converged", [](const ModelFile& f) { return f.fit.converged; })
        .def_property_readonly("loglik1", [](const ModelFile& f) { return f.fit.loglik1; })
        .def_property_readonly("loglik2", [](const ModelFile& f) { return f.fit.loglik2; })
        .def("save", [](const ModelFile& f, const std::string& path) { save_model(f, path); }, py::arg("path"))
        .def("_params_json", [](const ModelFile& f) { return to_json(f.fit).dump(); })
        .def("_summary_json",
             [](const ModelFile& f, const DatasetBundle& d) { return model_summary_json(f, Labels::of(d)).dump(); });

    m.def("load_dataset", [](const std::string& dir) { return load_dataset(dir); }, py::arg("path"));
    m.def("load_model", [](const std::string& path) { return load_model(path); }, py::arg("path"));

    m.def(
        "synthetic",
        [](int groups, int samples, int bins, std::uint64_t seed, int threads) {
            SyntheticConfig c;
            c.n_groups = groups;
            c.n_samples = samples;
            c.bins = bins;
            c.seed = seed;
            c.threads = threads;
            py::gil_scoped_release release;
            const auto data = generate_synthetic(c);
            std::vector<DatasetBundle> bundles;
            for (int g = 0; g < groups; ++g) bundles.push_back(synthetic_bundle(data, g));
            return std::make_pair(bundles, to_json(data.truth).dump());
        },
        py::arg("groups") = 1, py::arg("samples") = 1, py::arg("bins") = 300, py::arg("seed") = 0,
        py::arg("threads") = 1);

    m.def(
        "fit",
        [](const DatasetBundle& d, const std::string& options, std::uint64_t seed, int threads) {
            FitOptions o = fit_options_from_json(json::parse(options));
            o.seed = seed;
            o.threads = threads;
            o.validate();
            py::gil_scoped_release release;
            const auto fit = fit_model(d.signals, d.samples, o);
            return ModelFile{fit, o, {{"command", "fit"}, {"seed", seed}}};
        },
        py::arg("dataset"), py::arg("options") = "{}", py::arg("seed") = 0, py::arg("threads") = 1);

    m.def(
        "simulate",
        [](const ModelFile& f, const DatasetBundle& d, int start, int end, int replicates, std::uint64_t seed,
           int sample, int threads) {
            const auto& counts = sample_of(d, sample);
            SimulationSpec spec;
            spec.model = f.fit.model;
            spec.signals = d.signals;
            spec.horizon_start = start;
            spec.horizon_end = end == 0 ? d.signals.bins() : end;
            if (start < 1 || start - 1 > counts.bins()) throw std::invalid_argument("start out of range");
            spec.history = counts.slice(0, start - 1);
            spec.replicates = replicates;
            spec.seed = seed;
            spec.threads = threads;
            py::gil_scoped_release release;
            return prediction_json(predict(spec), Labels::of(d)).dump();
        },
        py::arg("model"), py::arg("dataset"), py::arg("start") = 1, py::arg("end") = 0, py::arg("replicates") = 20,
        py::arg("seed") = 0, py::arg("sample") = 0, py::arg("threads") = 1);

    m.def(
        "elasticities",
        [](const ModelFile& f, const DatasetBundle& d, const std::string& range, int sample, int threads) {
            const auto& counts = sample_of(d, sample);
            const auto r = parse_range(range, counts.bins());
            py::gil_scoped_release release;
            return elasticity_json(elasticity_report(f.fit.model, d.signals, counts, r, threads), Labels::of(d)).dump();
        },
        py::arg("model"), py::arg("dataset"), py::arg("range") = "", py::arg("sample") = 0, py::arg("threads") = 1);

    m.def(
        "whatif",
        [](const ModelFile& f, const DatasetBundle& d, const py::object& k, double r, int changepoint, int n_sims,
           std::uint64_t seed, int horizon, int sample, int threads) {
            const auto& counts = sample_of(d, sample);
            WhatIfScenario s;
            s.k_star = resolve_k(k, d.interventions);
            s.r = r;
            s.changepoint = changepoint == 0 ? static_cast<int>(0.8 * counts.bins()) : changepoint;
            s.n_sims = n_sims;
            s.seed = seed;
            s.horizon = horizon;
            WhatIfOptions o;
            o.threads = threads;
            py::gil_scoped_release release;
            return whatif_json(whatif_run(f.fit.model, d.signals, counts, s, o), Labels::of(d)).dump();
        },
        py::arg("model"), py::arg("dataset"), py::arg("k"), py::arg("r"), py::arg("changepoint") = 0,
        py::arg("n_sims") = 50, py::arg("seed") = 0, py::arg("horizon") = 0, py::arg("sample") = 0,
        py::arg("threads") = 1);

    m.def(
        "holdout",
        [](const DatasetBundle& d, int obs_end, int pred_end, int replicates, const std::string& options,
           std::uint64_t seed, const ModelFile* model, int sample) {
            const auto& counts = sample_of(d, sample);
            HoldoutSplit split;
            split.obs_end = obs_end == 0 ? static_cast<int>(0.8 * counts.bins()) : obs_end;
            split.pred_end = pred_end == 0 ? counts.bins() : pred_end;
            HoldoutOptions o;
            o.fit = fit_options_from_json(json::parse(options));
            o.fit.seed = seed;
            o.replicates = replicates;
            o.seed = seed;
            if (model) o.model = model->fit.model;
            py::gil_scoped_release release;
            return holdout_json(run_holdout(d.signals, counts, split, o), Labels::of(d)).dump();
        },
        py::arg("dataset"), py::arg("obs_end") = 0, py::arg("pred_end") = 0, py::arg("replicates") = 5,
        py::arg("options") = "{}", py::arg("seed") = 0, py::arg("model") = nullptr, py::arg("sample") = 0);

    m.def(
        "smape", [](const py::array_t<double>& p, const py::array_t<double>& a) { return smape(matrix_of(p), matrix_of(a)); },
        py::arg("predicted"), py::arg("actual"));
    m.def(
        "kl_shares",
        [](const std::vector<double>& actual, const std::vector<double>& predicted, double epsilon) {
            KlOptions o;
            o.epsilon = epsilon;
            return kl_shares(actual, predicted, o);
        },
        py::arg("actual"), py::arg("predicted"), py::arg("epsilon") = KlOptions{}.epsilon);

    m.def(
        "run_cli",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "omm");
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
