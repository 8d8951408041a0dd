#include "omm/cli.hpp"

#include "omm/reports.hpp"
#include "omm/service.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace omm {

namespace fs = std::filesystem;

namespace {

enum class Kind { integer, unsigned_integer, real, text, real_list, set_true, set_false };

struct Binding {
    CLI::Option* option{nullptr};
    std::string pointer;  // json pointer into the resolved config
    Kind kind{Kind::text};
    std::string value;
    bool flag{false};
};

json default_config() {
    json fit = to_json(FitOptions{});
    fit.erase("seed");
    fit.erase("threads");
    fit["bins"] = 0;
    return {
        {"seed", 0},
        {"threads", 1},
        {"out", "out"},
        {"data", ""},
        {"model", ""},
        {"sample", 0},
        {"fit", fit},
        {"holdout", {{"obs_end", 0}, {"pred_end", 0}, {"replicates", 5}}},
        {"synth", {{"groups", 20}, {"samples", 20}, {"bins", 300}}},
        {"simulate", {{"start", 1}, {"end", 0}, {"replicates", 1}}},
        {"elasticity", {{"range", ""}}},
        {"whatif",
         {{"k", 0},
          {"r", {-1.0, -0.5, 0.0, 0.5, 1.0}},
          {"changepoint", 0},
          {"n_sims", 50},
          {"horizon", 0},
          {"share_source", "realized"}}},
        {"serve", {{"host", "127.0.0.1"}, {"port", 8080}}},
    };
}

json convert(const Binding& b) {
    const std::string& s = b.value;
    auto fail = [&] { throw CLI::ValidationError(b.option->get_name(), "cannot parse '" + s + "'"); };
    switch (b.kind) {
        case Kind::integer: {
            std::int64_t v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) fail();
            return v;
        }
        case Kind::unsigned_integer: {
            std::uint64_t v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) fail();
            return v;
        }
        case Kind::real: {
            double v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) fail();
            return v;
        }
        case Kind::real_list: {
            json out = json::array();
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) {
                double v = 0;
                const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
                if (ec != std::errc() || p != item.data() + item.size()) fail();
                out.push_back(v);
            }
            if (out.empty()) fail();
            return out;
        }
        case Kind::set_true: return true;
        case Kind::set_false: return false;
        case Kind::text: return s;
    }
    return nullptr;
}

class Command {
public:
    Command(CLI::App& app, std::string name, std::string description)
        : sub_(app.add_subcommand(std::move(name), std::move(description))) {
        sub_->add_option("--config", config_path_, "JSON file with config overrides");
        opt("--seed", "/seed", Kind::unsigned_integer, "base random seed");
        opt("--out", "/out", Kind::text, "output directory");
        opt("--threads", "/threads", Kind::integer, "worker threads (0: all cores)");
    }

    Command& opt(const std::string& flag, const std::string& pointer, Kind kind, const std::string& help) {
        auto& b = bindings_.emplace_back();
        b.pointer = pointer;
        b.kind = kind;
        if (kind == Kind::set_true || kind == Kind::set_false) {
            b.flag = true;
            b.option = sub_->add_flag(flag, help);
        } else {
            b.option = sub_->add_option(flag, b.value, help);
        }
        return *this;
    }

    Command& data() { return opt("--data", "/data", Kind::text, "dataset directory"); }
    Command& model() { return opt("--model", "/model", Kind::text, "model file"); }
    Command& fit_flags() {
        opt("--no-interventions", "/fit/fit_interventions", Kind::set_false, "freeze gamma at 0");
        opt("--features", "/fit/feature_mode", Kind::text, "standardized | raw");
        opt("--max-iter", "/fit/max_iterations", Kind::integer, "optimizer iteration cap");
        opt("--tol", "/fit/gradient_tolerance", Kind::real, "gradient tolerance");
        opt("--restarts", "/fit/n_restarts", Kind::integer, "optimizer restarts");
        opt("--lambda-reg", "/fit/lambda_reg", Kind::real, "ridge penalty on gamma");
        return opt("--transform", "/fit/parameter_transform", Kind::text, "log | box");
    }

    [[nodiscard]] bool parsed() const { return sub_->parsed(); }
    [[nodiscard]] const std::string& name() const { return sub_->get_name(); }

    json resolve() const {
        json config = default_config();
        if (!config_path_.empty()) {
            std::ifstream in(config_path_);
            if (!in) throw std::invalid_argument("cannot read config file " + config_path_);
            json overrides;
            try {
                overrides = json::parse(in);
            } catch (const json::exception& e) {
                throw std::invalid_argument("config file " + config_path_ + ": " + e.what());
            }
            config.merge_patch(overrides);
        }
        for (const auto& b : bindings_)
            if (b.option->count() > 0) config[json::json_pointer(b.pointer)] = convert(b);
        config["command"] = name();
        return config;
    }

private:
    CLI::App* sub_;
    std::string config_path_;
    std::deque<Binding> bindings_;  // CLI11 keeps pointers into the elements
};

// --- helpers over the resolved config ---------------------------------------

std::uint64_t seed_of(const json& c) { return c.at("seed").get<std::uint64_t>(); }

FitOptions fit_options(const json& c) {
    FitOptions o = fit_options_from_json(c.at("fit"));
    o.seed = seed_of(c);
    o.threads = c.at("threads").get<int>();
    o.validate();
    return o;
}

fs::path out_dir(const json& c) {
    fs::path dir = c.at("out").get<std::string>();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
}

std::string required_path(const json& c, const char* key) {
    const auto v = c.at(key).get<std::string>();
    if (v.empty()) throw std::invalid_argument(std::string("--") + key + " is required");
    return v;
}

const CountPanel& sample_of(const DatasetBundle& bundle, const json& c) {
    const int s = c.at("sample").get<int>();
    if (s < 0 || s >= static_cast<int>(bundle.samples.size()))
        throw std::invalid_argument("sample " + std::to_string(s) + " out of range");
    return bundle.samples[s];
}

json envelope(const json& config, json result) {
    return {{"command", config.at("command")}, {"config", config}, {"seed", seed_of(config)}, {"result", std::move(result)}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::string csv_number(double v) {
    if (!std::isfinite(v)) return "nan";
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

// --- subcommands ---------------------------------------------------------------

int cmd_synth(const json& c, std::ostream& out) {
    SyntheticConfig sc;
    sc.seed = seed_of(c);
    sc.threads = c.at("threads").get<int>();
    sc.n_groups = c.at("/synth/groups"_json_pointer).get<int>();
    sc.n_samples = c.at("/synth/samples"_json_pointer).get<int>();
    sc.bins = c.at("/synth/bins"_json_pointer).get<int>();
    const auto data = generate_synthetic(sc);
    const auto dir = out_dir(c);
    for (int g = 0; g < sc.n_groups; ++g) {
        char name[32];
        std::snprintf(name, sizeof name, "group_%03d", g);
        save_dataset(synthetic_bundle(data, g), dir / name);
    }
    write_document(dir / "truth.json", "omm.truth",
                   envelope(c, {{"model", to_json(data.truth)},
                                {"groups", sc.n_groups},
                                {"samples", sc.n_samples},
                                {"bins", sc.bins}}));
    out << "wrote " << sc.n_groups * sc.n_samples << " panels in " << sc.n_groups << " groups to " << dir.string()
        << "\n";
    return kExitOk;
}

int cmd_fit(const json& c, std::ostream& out) {
    const auto data_path = required_path(c, "data");
    auto bundle = load_dataset(data_path);
    const auto options = fit_options(c);
    const int bins = c.at("/fit/bins"_json_pointer).get<int>();
    SignalSet signals = bundle.signals;
    std::vector<CountPanel> samples = bundle.samples;
    if (bins > 0) {
        if (bins > signals.bins()) throw std::invalid_argument("--bins exceeds the dataset length");
        signals = signals.slice(0, bins);
        for (auto& s : samples) s = s.slice(0, bins);
    }
    const auto fit = fit_model(signals, samples, options);
    ModelFile file{fit, options, {{"command", "fit"}, {"config", c}, {"seed", seed_of(c)}, {"data", data_path}}};
    const auto dir = out_dir(c);
    save_model(file, dir / "model.json");

    json warnings = fit.tier1.warnings;
    for (const auto& w : fit.tier2.warnings) warnings.push_back(w);
    if (const auto w = stability_warning(fit.model.volume)) warnings.push_back(*w);
    write_document(dir / "fit_report.json", "omm.report.fit",
                   envelope(c, {{"loglik1", number(fit.loglik1)},
                                {"loglik2", number(fit.loglik2)},
                                {"converged", fit.converged},
                                {"iterations", fit.iterations},
                                {"gradient_norm", number(fit.gradient_norm)},
                                {"tier1", to_json(fit.tier1)},
                                {"tier2", to_json(fit.tier2)},
                                {"warnings", warnings},
                                {"model", model_summary_json(file, Labels::of(bundle))}}));
    out << "converged=" << (fit.converged ? "true" : "false") << " iterations=" << fit.iterations
        << " loglik1=" << fit.loglik1 << " loglik2=" << fit.loglik2 << "\n";
    return kExitOk;
}

int cmd_eval(const json& c, std::ostream& out) {
    const auto bundle = load_dataset(required_path(c, "data"));
    const auto& counts = sample_of(bundle, c);
    const int T = counts.bins();
    HoldoutSplit split;
    split.obs_end = c.at("/holdout/obs_end"_json_pointer).get<int>();
    split.pred_end = c.at("/holdout/pred_end"_json_pointer).get<int>();
    if (split.obs_end == 0) split.obs_end = static_cast<int>(0.8 * T);
    if (split.pred_end == 0) split.pred_end = T;
    HoldoutOptions ho;
    ho.fit = fit_options(c);
    ho.replicates = c.at("/holdout/replicates"_json_pointer).get<int>();
    ho.seed = seed_of(c);
    const auto model_path = c.at("model").get<std::string>();
    if (!model_path.empty()) ho.model = load_model(model_path).fit.model;

    const auto report = run_holdout(bundle.signals, counts, split, ho);
    const auto labels = Labels::of(bundle);
    json resolved = c;
    resolved["holdout"]["obs_end"] = split.obs_end;
    resolved["holdout"]["pred_end"] = split.pred_end;
    const auto dir = out_dir(c);
    write_document(dir / "holdout_report.json", "omm.report.holdout", envelope(resolved, holdout_json(report, labels)));
    std::string csv = "platform,time,kl\n";
    for (std::size_t p = 0; p < report.kl.extent(0); ++p)
        for (std::size_t b = 0; b < report.kl.extent(1); ++b)
            csv += labels.platforms[p] + "," + std::to_string(split.pred_begin() + static_cast<int>(b)) + "," +
                   csv_number(report.kl(p, b)) + "\n";
    write_text(dir / "kl.csv", csv);
    out << "smape=" << report.smape << " baseline_smape=" << report.baseline_smape << " replicates=" << ho.replicates
        << "\n";
    return kExitOk;
}

int cmd_simulate(const json& c, std::ostream& out) {
    const auto bundle = load_dataset(required_path(c, "data"));
    const auto file = load_model(required_path(c, "model"));
    const auto& counts = sample_of(bundle, c);
    SimulationSpec spec;
    spec.model = file.fit.model;
    spec.horizon_start = c.at("/simulate/start"_json_pointer).get<int>();
    spec.horizon_end = c.at("/simulate/end"_json_pointer).get<int>();
    if (spec.horizon_end == 0) spec.horizon_end = bundle.signals.bins();
    if (spec.horizon_start < 1 || spec.horizon_start - 1 > counts.bins())
        throw std::invalid_argument("--start must lie in 1.." + std::to_string(counts.bins() + 1));
    spec.signals = bundle.signals;
    spec.history = counts.slice(0, spec.horizon_start - 1);
    spec.replicates = c.at("/simulate/replicates"_json_pointer).get<int>();
    spec.seed = seed_of(c);
    spec.threads = c.at("threads").get<int>();
    const auto prediction = predict(spec);

    const auto labels = Labels::of(bundle);
    const auto dir = out_dir(c);
    json resolved = c;
    resolved["simulate"]["end"] = spec.horizon_end;
    write_document(dir / "simulation_report.json", "omm.report.simulation",
                   envelope(resolved, prediction_json(prediction, labels)));
    DatasetBundle sim = bundle;
    sim.samples = {prediction.replicates.front().counts};
    sim.signals = bundle.signals.slice(0, spec.horizon_end);
    save_dataset(sim, dir / "simulated");
    out << "simulated bins " << spec.horizon_start << ".." << spec.horizon_end << " x " << spec.replicates
        << " replicates\n";
    return kExitOk;
}

int cmd_elasticity(const json& c, std::ostream& out) {
    const auto bundle = load_dataset(required_path(c, "data"));
    const auto file = load_model(required_path(c, "model"));
    const auto& counts = sample_of(bundle, c);
    const auto range = parse_range(c.at("/elasticity/range"_json_pointer).get<std::string>(), counts.bins());
    const auto report = elasticity_report(file.fit.model, bundle.signals, counts, range, c.at("threads").get<int>());
    const auto labels = Labels::of(bundle);
    const auto body = elasticity_json(report, labels);
    const auto dir = out_dir(c);
    write_document(dir / "elasticity_report.json", "omm.report.elasticity", envelope(c, body));

    auto cell = [](const json& v) { return v.is_null() ? std::string("nan") : csv_number(v.get<double>()); };
    std::string endo = "platform,source_platform,opinion,source_opinion,mean,coverage,defined\n";
    for (const auto& r : body["endogenous"])
        endo += r["platform"].get<std::string>() + "," + r["source_platform"].get<std::string>() + "," +
                r["opinion"].get<std::string>() + "," + r["source_opinion"].get<std::string>() + "," + cell(r["mean"]) +
                "," + csv_number(r["coverage"].get<double>()) + "," + (r["defined"].get<bool>() ? "1" : "0") + "\n";
    write_text(dir / "elasticity_endogenous.csv", endo);
    std::string inter = "platform,opinion,intervention,mean,coverage,defined\n";
    for (const auto& r : body["intervention"])
        inter += r["platform"].get<std::string>() + "," + r["opinion"].get<std::string>() + "," +
                 r["intervention"].get<std::string>() + "," + cell(r["mean"]) + "," +
                 csv_number(r["coverage"].get<double>()) + "," + (r["defined"].get<bool>() ? "1" : "0") + "\n";
    write_text(dir / "elasticity_intervention.csv", inter);
    out << "elasticities over bins " << range.begin + 1 << ".." << range.end << "\n";
    return kExitOk;
}

int resolve_k(const json& k, const std::vector<std::string>& names) {
    if (k.is_number_integer()) return k.get<int>();
    if (k.is_string()) {
        const auto s = k.get<std::string>();
        const auto it = std::find(names.begin(), names.end(), s);
        if (it != names.end()) return static_cast<int>(it - names.begin());
        int v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && p == s.data() + s.size()) return v;
        throw std::invalid_argument("unknown intervention '" + s + "'");
    }
    throw std::invalid_argument("whatif k must be an index or an intervention name");
}

int cmd_whatif(const json& c, std::ostream& out) {
    const auto bundle = load_dataset(required_path(c, "data"));
    const auto file = load_model(required_path(c, "model"));
    const auto& counts = sample_of(bundle, c);
    const auto& w = c.at("whatif");
    WhatIfScenario base;
    base.k_star = resolve_k(w.at("k"), bundle.interventions);
    base.changepoint = w.at("changepoint").get<int>();
    if (base.changepoint == 0) base.changepoint = static_cast<int>(0.8 * counts.bins());
    base.n_sims = w.at("n_sims").get<int>();
    base.horizon = w.at("horizon").get<int>();
    base.seed = seed_of(c);
    WhatIfOptions wo;
    wo.threads = c.at("threads").get<int>();
    const auto source = w.at("share_source").get<std::string>();
    if (source == "model") {
        wo.share_source = ShareSource::model;
    } else if (source != "realized") {
        throw std::invalid_argument("share_source must be realized or model");
    }

    const auto labels = Labels::of(bundle);
    json rows = json::array();
    std::string csv = "r,platform,opinion,percent_change,replicate_sd\n";
    for (const auto& rv : w.at("r")) {
        WhatIfScenario s = base;
        s.r = rv.get<double>();
        const auto result = whatif_run(file.fit.model, bundle.signals, counts, s, wo);
        rows.push_back(whatif_json(result, labels));
        for (std::size_t p = 0; p < labels.platforms.size(); ++p)
            for (std::size_t i = 0; i < labels.opinions.size(); ++i)
                csv += csv_number(s.r) + "," + labels.platforms[p] + "," + labels.opinions[i] + "," +
                       csv_number(result.percent_change(p, i)) + "," + csv_number(result.replicate_sd(p, i)) + "\n";
    }
    json resolved = c;
    resolved["whatif"]["changepoint"] = base.changepoint;
    resolved["whatif"]["k"] = base.k_star;
    const auto dir = out_dir(c);
    write_document(dir / "whatif_report.json", "omm.report.whatif", envelope(resolved, {{"runs", rows}}));
    write_text(dir / "whatif.csv", csv);
    out << "what-if sweep over " << w.at("r").size() << " values of r, " << base.n_sims << " paired simulations each\n";
    return kExitOk;
}

int cmd_serve(const json& c, std::ostream& out) {
    auto file = load_model(required_path(c, "model"));
    auto bundle = load_dataset(required_path(c, "data"));
    ServiceOptions so;
    so.host = c.at("/serve/host"_json_pointer).get<std::string>();
    so.port = c.at("/serve/port"_json_pointer).get<int>();
    so.threads = c.at("threads").get<int>();
    Service service(std::move(file), std::move(bundle), so);
    const int port = service.bind();
    out << "listening on http://" << so.host << ":" << port << std::endl;
    service.listen();
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Opinion market model: simulate, fit, evaluate and probe interventions"};
    app.require_subcommand(1);
    std::vector<std::pair<std::unique_ptr<Command>, int (*)(const json&, std::ostream&)>> commands;
    commands.emplace_back(std::make_unique<Command>(app, "synth", "generate synthetic groups and their truth"), cmd_synth);
    commands.back().first->opt("--default", "/synth/default", Kind::set_true, "default synthetic configuration")
        .opt("--groups", "/synth/groups", Kind::integer, "number of groups")
        .opt("--samples", "/synth/samples", Kind::integer, "samples per group")
        .opt("--bins", "/synth/bins", Kind::integer, "bins per sample");
    commands.emplace_back(std::make_unique<Command>(app, "fit", "fit a model to a dataset"), cmd_fit);
    commands.back().first->data().fit_flags().opt("--bins", "/fit/bins", Kind::integer, "fit on the first N bins only");
    commands.emplace_back(std::make_unique<Command>(app, "eval", "temporal holdout evaluation"), cmd_eval);
    commands.back().first->data().model().fit_flags()
        .opt("--obs-end", "/holdout/obs_end", Kind::integer, "last observed bin (default 80%)")
        .opt("--pred-end", "/holdout/pred_end", Kind::integer, "last predicted bin (default T)")
        .opt("--replicates", "/holdout/replicates", Kind::integer, "simulation replicates")
        .opt("--sample", "/sample", Kind::integer, "sample index within the dataset");
    commands.emplace_back(std::make_unique<Command>(app, "simulate", "simulate forward from a fitted model"), cmd_simulate);
    commands.back().first->data().model()
        .opt("--start", "/simulate/start", Kind::integer, "first simulated bin")
        .opt("--end", "/simulate/end", Kind::integer, "last simulated bin")
        .opt("--replicates", "/simulate/replicates", Kind::integer, "replicates")
        .opt("--sample", "/sample", Kind::integer, "sample index used as history");
    commands.emplace_back(std::make_unique<Command>(app, "elasticity", "elasticity report"), cmd_elasticity);
    commands.back().first->data().model()
        .opt("--range", "/elasticity/range", Kind::text, "bins a:b (1-based, inclusive)")
        .opt("--sample", "/sample", Kind::integer, "sample index");
    commands.emplace_back(std::make_unique<Command>(app, "whatif", "intervention what-if sweep"), cmd_whatif);
    commands.back().first->data().model()
        .opt("--k", "/whatif/k", Kind::text, "intervention index or name")
        .opt("--r", "/whatif/r", Kind::real_list, "comma separated modulation fractions")
        .opt("--changepoint", "/whatif/changepoint", Kind::integer, "last unmodified bin")
        .opt("--n-sims", "/whatif/n_sims", Kind::integer, "paired simulations per r")
        .opt("--horizon", "/whatif/horizon", Kind::integer, "last simulated bin")
        .opt("--share-source", "/whatif/share_source", Kind::text, "realized | model")
        .opt("--sample", "/sample", Kind::integer, "sample index used as history");
    commands.emplace_back(std::make_unique<Command>(app, "serve", "local HTTP service"), cmd_serve);
    commands.back().first->data().model()
        .opt("--host", "/serve/host", Kind::text, "bind address (default loopback)")
        .opt("--port", "/serve/port", Kind::integer, "port");

    std::vector<char*> argv;
    std::vector<std::string> storage = args;
    for (auto& a : storage) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    for (auto& [command, handler] : commands) {
        if (!command->parsed()) continue;
        const std::string stage = command->name();
        try {
            const json config = command->resolve();
            return handler(config, out);
        } catch (const CLI::Error& e) {
            err << "error[" << stage << "]: " << e.what() << "\n";
            return kExitUsage;
        } catch (const DataError& e) {
            err << "error[" << stage << "]: " << e.what() << "\n";
            return kExitData;
        } catch (const NumericalError& e) {
            err << "error[" << stage << "]: " << e.what() << "\n";
            return kExitNumerical;
        } catch (const std::exception& e) {
            err << "error[" << stage << "]: " << e.what() << "\n";
            return kExitUsage;
        }
    }
    return kExitUsage;
}

int run_cli(int argc, char** argv) {
    return run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}

}  // namespace omm
