#include "omm/reports.hpp"

#include <charconv>
#include <cmath>

namespace omm {

BinRange parse_range(const std::string& text, int bins) {
    if (text.empty()) return {0, bins};
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("range must look like a:b, got '" + text + "'");
    auto read = [&](std::string_view s, int fallback) {
        if (s.empty()) return fallback;
        int v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size())
            throw std::invalid_argument("range bound is not an integer: '" + std::string(s) + "'");
        return v;
    };
    const std::string_view all(text);
    const int a = read(all.substr(0, colon), 1);
    const int b = read(all.substr(colon + 1), bins);
    if (a < 1 || b > bins || a > b)
        throw std::invalid_argument("range " + text + " is outside 1:" + std::to_string(bins) + " or empty");
    return {a - 1, b};
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

namespace {

json numbers(std::span<const double> v) {
    json out = json::array();
    for (double x : v) out.push_back(number(x));
    return out;
}

// table[p][i] -> {platform: {opinion: value}}
json by_platform_opinion(const Matrix& m, const Labels& l) {
    json out = json::object();
    for (std::size_t p = 0; p < m.extent(0); ++p)
        for (std::size_t i = 0; i < m.extent(1); ++i) out[l.platforms[p]][l.opinions[i]] = number(m(p, i));
    return out;
}

}  // namespace

json model_summary_json(const ModelFile& file, const Labels& l) {
    const Model& m = file.fit.model;
    json j;
    j["dimensions"] = {{"platforms", m.platforms()}, {"opinions", m.opinions()}, {"interventions", m.interventions()}};
    j["labels"] = {{"platforms", l.platforms}, {"opinions", l.opinions}, {"interventions", l.interventions}};
    j["parameters"] = to_json(m);
    j["summary"] = {{"loglik1", number(file.fit.loglik1)},
                    {"loglik2", number(file.fit.loglik2)},
                    {"converged", file.fit.converged},
                    {"iterations", file.fit.iterations},
                    {"theta", m.volume.theta},
                    {"mu", m.volume.mu},
                    {"alpha_spectral_radius", number(spectral_radius(m.volume.alpha))}};
    j["options"] = to_json(file.options);
    return j;
}

json holdout_json(const HoldoutReport& r, const Labels& l) {
    json j;
    j["split"] = {{"obs_begin", r.split.obs_begin}, {"obs_end", r.split.obs_end}, {"pred_end", r.split.pred_end}};
    j["smape"] = number(r.smape);
    j["baseline_smape"] = number(r.baseline_smape);
    j["tier1_holdout_loglik"] = number(r.tier1_holdout_loglik);
    j["tier2_holdout_loglik"] = number(r.tier2_holdout_loglik);
    j["replicates"] = r.prediction.replicates.size();
    json kl = json::object();
    json kl_mean = json::object();
    json predicted = json::object();
    json actual = json::object();
    const std::size_t W = r.kl.extent(1);
    for (std::size_t p = 0; p < r.kl.extent(0); ++p) {
        std::vector<double> row(W), pv(W), av(W);
        double mean = 0.0;
        for (std::size_t b = 0; b < W; ++b) {
            row[b] = r.kl(p, b);
            pv[b] = r.prediction.volumes(p, b);
            av[b] = r.actual_volumes(p, b);
            mean += row[b];
        }
        kl[l.platforms[p]] = numbers(row);
        kl_mean[l.platforms[p]] = number(mean / static_cast<double>(W));
        predicted[l.platforms[p]] = numbers(pv);
        actual[l.platforms[p]] = numbers(av);
    }
    j["kl"] = kl;
    j["kl_mean"] = kl_mean;
    j["predicted_volumes"] = predicted;
    j["actual_volumes"] = actual;
    if (r.fit) {
        j["fit"] = {{"loglik1", number(r.fit->loglik1)},
                    {"loglik2", number(r.fit->loglik2)},
                    {"converged", r.fit->converged},
                    {"iterations", r.fit->iterations}};
    }
    return j;
}

json prediction_json(const Prediction& pr, const Labels& l) {
    json j;
    j["begin"] = pr.begin;
    j["end"] = pr.end;
    j["replicates"] = pr.replicates.size();
    json volumes = json::object();
    json shares = json::object();
    const std::size_t W = pr.volumes.extent(1);
    for (std::size_t p = 0; p < pr.volumes.extent(0); ++p) {
        std::vector<double> v(W);
        for (std::size_t b = 0; b < W; ++b) v[b] = pr.volumes(p, b);
        volumes[l.platforms[p]] = numbers(v);
        for (std::size_t i = 0; i < pr.shares.extent(1); ++i) {
            for (std::size_t b = 0; b < W; ++b) v[b] = pr.shares(p, i, b);
            shares[l.platforms[p]][l.opinions[i]] = numbers(v);
        }
    }
    j["volumes"] = volumes;
    j["shares"] = shares;
    return j;
}

json elasticity_json(const ElasticityReport& r, const Labels& l) {
    const auto endo = time_average(r.endogenous, r.endogenous_defined, 0, r.end - r.begin);
    const auto inter = time_average(r.intervention, r.intervention_defined, 0, r.end - r.begin);
    json j;
    j["range"] = {{"begin", r.begin + 1}, {"end", r.end}};
    json e = json::array();
    for (std::size_t p = 0; p < endo.mean.extent(0); ++p)
        for (std::size_t q = 0; q < endo.mean.extent(1); ++q)
            for (std::size_t i = 0; i < endo.mean.extent(2); ++i)
                for (std::size_t k = 0; k < endo.mean.extent(3); ++k)
                    e.push_back({{"platform", l.platforms[p]},
                                 {"source_platform", l.platforms[q]},
                                 {"opinion", l.opinions[i]},
                                 {"source_opinion", l.opinions[k]},
                                 {"mean", endo.defined(p, q, i, k) ? number(endo.mean(p, q, i, k)) : json(nullptr)},
                                 {"coverage", endo.coverage(p, q, i, k)},
                                 {"defined", endo.defined(p, q, i, k) != 0}});
    json x = json::array();
    for (std::size_t p = 0; p < inter.mean.extent(0); ++p)
        for (std::size_t i = 0; i < inter.mean.extent(1); ++i)
            for (std::size_t k = 0; k < inter.mean.extent(2); ++k)
                x.push_back({{"platform", l.platforms[p]},
                             {"opinion", l.opinions[i]},
                             {"intervention", l.interventions[k]},
                             {"mean", inter.defined(p, i, k) ? number(inter.mean(p, i, k)) : json(nullptr)},
                             {"coverage", inter.coverage(p, i, k)},
                             {"defined", inter.defined(p, i, k) != 0}});
    j["endogenous"] = e;
    j["intervention"] = x;
    return j;
}

json scenario_json(const WhatIfScenario& s) {
    json j = {{"k_star", s.k_star}, {"r", s.r}, {"changepoint", s.changepoint}, {"n_sims", s.n_sims},
              {"horizon", s.horizon}, {"seed", s.seed}};
    if (s.mean_window) j["mean_window"] = {{"begin", s.mean_window->begin + 1}, {"end", s.mean_window->end}};
    return j;
}

json whatif_json(const WhatIfResult& r, const Labels& l) {
    json j;
    j["scenario"] = scenario_json(r.scenario);
    j["intervention"] = l.interventions.at(static_cast<std::size_t>(r.scenario.k_star));
    j["percent_change"] = by_platform_opinion(r.percent_change, l);
    j["replicate_sd"] = by_platform_opinion(r.replicate_sd, l);
    j["baseline_share"] = by_platform_opinion(r.baseline_share, l);
    j["modulated_share"] = by_platform_opinion(r.modulated_share, l);
    return j;
}

}  // namespace omm
