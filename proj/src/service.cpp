#include "omm/service.hpp"

#include "omm/reports.hpp"

#include <httplib.h>

#include <condition_variable>
#include <cstdio>
#include <map>
#include <mutex>
#include <thread>

namespace omm {

namespace {

struct Job {
    std::mutex mutex;
    std::condition_variable changed;
    std::vector<std::pair<int, int>> progress;
    bool finished{false};
    int status{202};
    std::string body;
};

ServiceResponse error_response(int status, const std::string& code, const std::string& message) {
    return {status, json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

std::string progress_event(int done, int total) {
    return "event: progress\ndata: " + json{{"done", done}, {"total", total}}.dump() + "\n\n";
}

std::string final_event(int status) {
    return std::string(status == 200 ? "event: done" : "event: error") + "\ndata: " + json{{"status", status}}.dump() +
           "\n\n";
}

}  // namespace

struct Service::Impl {
    ModelFile model;
    DatasetBundle data;
    Labels labels;
    ServiceOptions options;
    httplib::Server server;

    mutable std::mutex jobs_mutex;
    std::map<std::string, std::shared_ptr<Job>> jobs;
    std::vector<std::thread> workers;

    const CountPanel& counts() const { return data.samples.front(); }

    std::shared_ptr<Job> find(const std::string& id) const {
        std::lock_guard lock(jobs_mutex);
        const auto it = jobs.find(id);
        return it == jobs.end() ? nullptr : it->second;
    }

    void run(const std::shared_ptr<Job>& job, const WhatIfScenario& scenario, const std::string& id) {
        WhatIfOptions wopts;
        wopts.threads = options.threads;
        wopts.progress = [&job](int done, int total) {
            std::lock_guard lock(job->mutex);
            job->progress.emplace_back(done, total);
            job->changed.notify_all();
        };
        ServiceResponse out;
        try {
            const auto result = whatif_run(model.fit.model, data.signals, counts(), scenario, wopts);
            out = {200, json{{"id", id}, {"result", whatif_json(result, labels)}}.dump()};
        } catch (const NumericalError& e) {
            out = error_response(422, "numerical_failure", e.what());
        } catch (const std::logic_error& e) {
            out = error_response(400, "bad_request", e.what());
        } catch (const std::exception& e) {
            out = error_response(500, "internal", e.what());
        }
        std::lock_guard lock(job->mutex);
        job->status = out.status;
        job->body = std::move(out.body);
        job->finished = true;
        job->changed.notify_all();
    }
};

Service::Service(ModelFile model, DatasetBundle data, ServiceOptions options) : impl_(std::make_unique<Impl>()) {
    data.validate();
    const Model& m = model.fit.model;
    if (m.platforms() != static_cast<int>(data.platforms.size()) ||
        m.opinions() != static_cast<int>(data.opinions.size()) ||
        m.interventions() != static_cast<int>(data.interventions.size()))
        throw DataError("service: model dimensions do not match the dataset");
    impl_->model = std::move(model);
    impl_->data = std::move(data);
    impl_->labels = Labels::of(impl_->data);
    impl_->options = std::move(options);

    auto send = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    auto& srv = impl_->server;
    srv.Get("/model", [this, send](const httplib::Request&, httplib::Response& res) { send(res, get_model()); });
    srv.Get("/shares", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_shares(req.get_param_value("range")));
    });
    srv.Get("/elasticities", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_elasticities(req.get_param_value("range")));
    });
    srv.Post("/whatif", [this, send](const httplib::Request& req, httplib::Response& res) {
        const auto async = req.get_param_value("async");
        send(res, post_whatif(req.body, async == "1" || async == "true"));
    });
    srv.Get(R"(/whatif/([0-9a-f]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, get_whatif(req.matches[1]));
    });
    srv.Get(R"(/whatif/([0-9a-f]+)/events)", [this, send](const httplib::Request& req, httplib::Response& res) {
        auto job = impl_->find(req.matches[1]);
        if (!job) return send(res, error_response(404, "not_found", "unknown scenario id"));
        auto sent = std::make_shared<std::size_t>(0);
        res.set_chunked_content_provider("text/event-stream", [job, sent](std::size_t, httplib::DataSink& sink) {
            std::unique_lock lock(job->mutex);
            job->changed.wait(lock, [&] { return job->finished || job->progress.size() > *sent; });
            std::string chunk;
            for (; *sent < job->progress.size(); ++*sent)
                chunk += progress_event(job->progress[*sent].first, job->progress[*sent].second);
            const bool finished = job->finished;
            const int status = job->status;
            lock.unlock();
            if (!chunk.empty() && !sink.write(chunk.data(), chunk.size())) return false;
            if (finished) {
                const auto last = final_event(status);
                sink.write(last.data(), last.size());
                sink.done();
            }
            return true;
        });
    });
}

Service::~Service() {
    stop();
    for (auto& t : impl_->workers)
        if (t.joinable()) t.join();
}

int Service::bind() {
    auto& o = impl_->options;
    if (o.port == 0) {
        const int port = impl_->server.bind_to_any_port(o.host);
        if (port < 0) throw std::runtime_error("cannot bind " + o.host);
        o.port = port;
    } else if (!impl_->server.bind_to_port(o.host, o.port)) {
        throw std::runtime_error("cannot bind " + o.host + ":" + std::to_string(o.port));
    }
    return o.port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

ServiceResponse Service::get_model() const {
    return {200, model_summary_json(impl_->model, impl_->labels).dump()};
}

ServiceResponse Service::get_shares(const std::string& range_text) const {
    const auto& counts = impl_->counts();
    BinRange range;
    try {
        range = parse_range(range_text, counts.bins());
    } catch (const std::invalid_argument& e) {
        return error_response(400, "bad_request", e.what());
    }
    const Model& m = impl_->model.fit.model;
    const auto state = share_state(m, impl_->data.signals, counts);
    const auto observed = observed_shares(counts, range.begin, range.end);
    const auto trace = compute_volume_trace(m.volume, impl_->data.signals, counts, false);
    const auto& l = impl_->labels;
    json fitted = json::object();
    json obs = json::object();
    json volumes = json::object();
    for (int p = 0; p < m.platforms(); ++p) {
        std::vector<double> lam, n;
        for (int b = range.begin; b < range.end; ++b) {
            lam.push_back(trace.intensity(p, b));
            n.push_back(static_cast<double>(counts.platform_total(p, b)));
        }
        volumes[l.platforms[p]] = {{"intensity", lam}, {"observed", n}};
        for (int i = 0; i < m.opinions(); ++i) {
            std::vector<double> f, o;
            for (int b = range.begin; b < range.end; ++b) {
                f.push_back(state.shares(p, i, b));
                o.push_back(observed(p, i, b - range.begin));
            }
            fitted[l.platforms[p]][l.opinions[i]] = f;
            obs[l.platforms[p]][l.opinions[i]] = o;
        }
    }
    json body = {{"range", {{"begin", range.begin + 1}, {"end", range.end}}},
                 {"fitted", fitted},
                 {"observed", obs},
                 {"volumes", volumes}};
    return {200, body.dump()};
}

ServiceResponse Service::get_elasticities(const std::string& range_text) const {
    const auto& counts = impl_->counts();
    BinRange range;
    try {
        range = parse_range(range_text, counts.bins());
    } catch (const std::invalid_argument& e) {
        return error_response(400, "bad_request", e.what());
    }
    try {
        const auto report = elasticity_report(impl_->model.fit.model, impl_->data.signals, counts, range,
                                              impl_->options.threads);
        return {200, elasticity_json(report, impl_->labels).dump()};
    } catch (const NumericalError& e) {
        return error_response(422, "numerical_failure", e.what());
    }
}

ServiceResponse Service::post_whatif(const std::string& body, bool async) {
    WhatIfScenario s;
    const auto& l = impl_->labels;
    try {
        const json req = json::parse(body);
        if (!req.is_object()) throw std::invalid_argument("request body must be an object");
        const auto& k = req.at("k_star");
        if (k.is_string()) {
            const auto it = std::find(l.interventions.begin(), l.interventions.end(), k.get<std::string>());
            if (it == l.interventions.end()) throw std::invalid_argument("unknown intervention " + k.dump());
            s.k_star = static_cast<int>(it - l.interventions.begin());
        } else {
            s.k_star = k.get<int>();
        }
        s.r = req.at("r").get<double>();
        s.changepoint = req.at("changepoint").get<int>();
        s.n_sims = req.value("n_sims", 50);
        s.seed = req.value("seed", std::uint64_t{0});
        s.horizon = req.value("horizon", 0);
        if (!s.horizon) s.horizon = impl_->data.signals.bins();
        s.validate(impl_->model.fit.model.interventions(), impl_->data.signals.bins());
    } catch (const json::exception& e) {
        return error_response(400, "bad_request", e.what());
    } catch (const std::invalid_argument& e) {
        return error_response(400, "bad_request", e.what());
    }

    char id_buf[24];
    std::snprintf(id_buf, sizeof id_buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(scenario_json(s).dump())));
    const std::string id = id_buf;

    std::shared_ptr<Job> job;
    bool owner = false;
    {
        std::lock_guard lock(impl_->jobs_mutex);
        auto& slot = impl_->jobs[id];
        if (!slot) {
            slot = std::make_shared<Job>();
            owner = true;
        }
        job = slot;
        if (owner && async) impl_->workers.emplace_back([this, job, s, id] { impl_->run(job, s, id); });
    }
    if (owner && !async) impl_->run(job, s, id);

    std::unique_lock lock(job->mutex);
    if (!async) job->changed.wait(lock, [&] { return job->finished; });
    if (!job->finished) return {202, json{{"id", id}, {"status", "running"}}.dump()};
    return {job->status, job->body};
}

ServiceResponse Service::get_whatif(const std::string& id) const {
    const auto job = impl_->find(id);
    if (!job) return error_response(404, "not_found", "unknown scenario id");
    std::lock_guard lock(job->mutex);
    if (!job->finished) return {202, json{{"id", id}, {"status", "running"}}.dump()};
    return {job->status, job->body};
}

ServiceResponse Service::get_whatif_events(const std::string& id) const {
    const auto job = impl_->find(id);
    if (!job) return error_response(404, "not_found", "unknown scenario id");
    std::lock_guard lock(job->mutex);
    std::string out;
    for (const auto& [done, total] : job->progress) out += progress_event(done, total);
    if (job->finished) out += final_event(job->status);
    return {200, out, "text/event-stream"};
}

}  // namespace omm
