#include "omm/intervention_lab.hpp"

#include "omm/parallel.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace omm {

ShareState share_state(const Model& model, const SignalSet& signals, const CountPanel& counts) {
    ShareState st;
    st.lam_raw = conditional_intensities(model.share.mu_split, model.volume, signals, counts);
    st.xbar_raw = smoothed_interventions(signals, model.volume.theta, counts.bins());
    st.features = apply_scaling(st.lam_raw, st.xbar_raw, model.scaling);
    st.shares = compute_shares(model.share, st.features);
    return st;
}

namespace {

void check_bin(const ShareState& state, int b) {
    if (b < 0 || b >= static_cast<int>(state.shares.extent(2))) throw std::out_of_range("elasticity bin out of range");
}

// v * (dT_i - sum_m s_m dT_m) given dT over m.
double elasticity(const ShareState& state, int p, int i, int b, double v, const std::vector<double>& dT) {
    double mean = 0.0;
    for (std::size_t m = 0; m < dT.size(); ++m) mean += state.shares(p, m, b) * dT[m];
    return v * (dT[i] - mean);
}

}  // namespace

std::optional<double> endogenous_elasticity(const Model& model, const ShareState& state, int p, int i, int q, int j,
                                            int b) {
    check_bin(state, b);
    const double v = state.lam_raw(q, j, b);
    if (v == 0.0) return std::nullopt;
    const int M = model.opinions();
    const double slope = model.scaling.lam_slope(q, j, v);
    std::vector<double> dT(M);
    for (int m = 0; m < M; ++m) dT[m] = model.share.beta(p, q, m, j) * slope;
    return elasticity(state, p, i, b, v, dT);
}

std::optional<double> intervention_elasticity(const Model& model, const ShareState& state, int p, int i, int k,
                                              int b) {
    check_bin(state, b);
    const double v = state.xbar_raw(k, b);
    if (v == 0.0) return std::nullopt;
    const int M = model.opinions();
    const double slope = model.scaling.xbar_slope(k);
    std::vector<double> dT(M);
    for (int m = 0; m < M; ++m) dT[m] = model.share.gamma(p, m, k) * slope;
    return elasticity(state, p, i, b, v, dT);
}

ElasticityReport elasticity_report(const Model& model, const SignalSet& signals, const CountPanel& counts,
                                   BinRange range, int threads) {
    const int T = counts.bins();
    const int begin = range.begin;
    const int end = range.resolved_end(T);
    if (begin < 0 || end > T || begin >= end) throw std::invalid_argument("elasticity range is empty or out of bounds");
    const auto state = share_state(model, signals, counts);
    const auto P = static_cast<std::size_t>(model.platforms());
    const auto M = static_cast<std::size_t>(model.opinions());
    const auto K = static_cast<std::size_t>(model.interventions());
    const auto W = static_cast<std::size_t>(end - begin);

    ElasticityReport r;
    r.begin = begin;
    r.end = end;
    r.endogenous = Tensor5({P, P, M, M, W});
    r.endogenous_defined = Mask5({P, P, M, M, W});
    r.intervention = Array4({P, M, K, W});
    r.intervention_defined = Mask4({P, M, K, W});

    parallel_for(P, resolve_threads(threads), [&](std::size_t pp) {
        const int p = static_cast<int>(pp);
        for (int i = 0; i < static_cast<int>(M); ++i) {
            for (int q = 0; q < static_cast<int>(P); ++q)
                for (int j = 0; j < static_cast<int>(M); ++j)
                    for (int b = begin; b < end; ++b) {
                        const auto e = endogenous_elasticity(model, state, p, i, q, j, b);
                        r.endogenous(p, q, i, j, b - begin) = e.value_or(0.0);
                        r.endogenous_defined(p, q, i, j, b - begin) = e.has_value();
                    }
            for (int k = 0; k < static_cast<int>(K); ++k)
                for (int b = begin; b < end; ++b) {
                    const auto e = intervention_elasticity(model, state, p, i, k, b);
                    r.intervention(p, i, k, b - begin) = e.value_or(0.0);
                    r.intervention_defined(p, i, k, b - begin) = e.has_value();
                }
        }
    });
    return r;
}

std::vector<std::vector<double>> modulate_intervention(const std::vector<std::vector<double>>& x, int k_star,
                                                       double r, int changepoint, BinRange mean_window) {
    if (k_star < 0 || k_star >= static_cast<int>(x.size()))
        throw std::invalid_argument("k_star " + std::to_string(k_star) + " out of range");
    const auto& series = x[k_star];
    const int T = static_cast<int>(series.size());
    const int w0 = mean_window.begin;
    const int w1 = mean_window.resolved_end(T);
    if (w0 < 0 || w1 > T || w0 >= w1) throw std::invalid_argument("intervention mean window is empty");
    double mean = 0.0;
    for (int b = w0; b < w1; ++b) mean += series[b];
    mean /= static_cast<double>(w1 - w0);

    auto out = x;
    for (int b = std::max(changepoint, 0); b < T; ++b) out[k_star][b] += r * mean;
    return out;
}

void WhatIfScenario::validate(int interventions, int bins) const {
    if (k_star < 0 || k_star >= interventions)
        throw std::invalid_argument("k_star " + std::to_string(k_star) + " out of range");
    if (n_sims < 1) throw std::invalid_argument("n_sims must be >= 1");
    if (!std::isfinite(r)) throw std::invalid_argument("r must be finite");
    const int h = horizon ? horizon : bins;
    if (h > bins) throw std::invalid_argument("horizon exceeds the signal length");
    if (changepoint < 1 || changepoint >= h) throw std::invalid_argument("changepoint must lie inside the horizon");
}

WhatIfResult whatif_run(const Model& model, const SignalSet& signals, const CountPanel& history,
                        const WhatIfScenario& scenario, const WhatIfOptions& options) {
    scenario.validate(model.interventions(), signals.bins());
    const int horizon = scenario.horizon ? scenario.horizon : signals.bins();
    const int c = scenario.changepoint;
    if (history.bins() < c) throw std::invalid_argument("history must cover bins up to the changepoint");
    const BinRange window = scenario.mean_window.value_or(BinRange{0, c});

    const SignalSet base = signals.slice(0, horizon);
    const SignalSet modulated =
        base.with_interventions(modulate_intervention(base.interventions(), scenario.k_star, scenario.r, c, window));

    const CountPanel prefix = history.slice(0, c);
    SimulationSpec spec0{model, base, prefix, c + 1, horizon, scenario.n_sims, scenario.seed, 1};
    SimulationSpec spec1{model, modulated, prefix, c + 1, horizon, scenario.n_sims, scenario.seed, 1};
    spec0.validate();
    spec1.validate();

    const int P = model.platforms();
    const int M = model.opinions();
    const int R = scenario.n_sims;
    const auto sz = [](int v) { return static_cast<std::size_t>(v); };
    // window-mean shares per replicate, (run, p, i, replicate)
    Array4 means({2, sz(P), sz(M), sz(R)});
    std::atomic<int> done{0};
    const int total = 2 * R;

    parallel_for(sz(total), resolve_threads(options.threads), [&](std::size_t job) {
        const int run = static_cast<int>(job) % 2;
        const int rep = static_cast<int>(job) / 2;
        const auto path = simulate_path(run ? spec1 : spec0, rep);
        const Array3 shares =
            options.share_source == ShareSource::realized ? realized_shares(path, c, horizon) : [&] {
                Array3 s({sz(P), sz(M), sz(horizon - c)});
                for (int p = 0; p < P; ++p)
                    for (int i = 0; i < M; ++i)
                        for (int b = c; b < horizon; ++b) s(p, i, b - c) = path.shares(p, i, b);
                return s;
            }();
        for (int p = 0; p < P; ++p)
            for (int i = 0; i < M; ++i) {
                double m = 0.0;
                for (int b = 0; b < horizon - c; ++b) m += shares(p, i, b);
                means(run, p, i, rep) = m / static_cast<double>(horizon - c);
            }
        const int finished = ++done;
        if (options.progress) options.progress(finished, total);
    });

    auto pct = [](double now, double ref) {
        if (ref == 0.0) return now == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
        return 100.0 * (now - ref) / ref;
    };

    WhatIfResult out;
    out.scenario = scenario;
    out.scenario.horizon = horizon;
    out.scenario.mean_window = window;
    out.percent_change = Matrix({sz(P), sz(M)});
    out.baseline_share = Matrix({sz(P), sz(M)});
    out.modulated_share = Matrix({sz(P), sz(M)});
    out.replicate_change = Array3({sz(P), sz(M), sz(R)});
    out.replicate_sd = Matrix({sz(P), sz(M)});
    for (int p = 0; p < P; ++p)
        for (int i = 0; i < M; ++i) {
            double m0 = 0.0;
            double m1 = 0.0;
            for (int rep = 0; rep < R; ++rep) {
                m0 += means(0, p, i, rep);
                m1 += means(1, p, i, rep);
                out.replicate_change(p, i, rep) = pct(means(1, p, i, rep), means(0, p, i, rep));
            }
            m0 /= R;
            m1 /= R;
            out.baseline_share(p, i) = m0;
            out.modulated_share(p, i) = m1;
            out.percent_change(p, i) = pct(m1, m0);
            double mu = 0.0;
            for (int rep = 0; rep < R; ++rep) mu += out.replicate_change(p, i, rep);
            mu /= R;
            double var = 0.0;
            for (int rep = 0; rep < R; ++rep) var += std::pow(out.replicate_change(p, i, rep) - mu, 2);
            out.replicate_sd(p, i) = R > 1 ? std::sqrt(var / (R - 1)) : 0.0;
        }
    return out;
}

}  // namespace omm
