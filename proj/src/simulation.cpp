#include "omm/simulation.hpp"

#include "omm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace omm {

void SimulationSpec::validate() const {
    if (horizon_start < 1) throw std::invalid_argument("horizon start must be >= 1");
    if (horizon_end < horizon_start) throw std::invalid_argument("horizon end precedes horizon start");
    if (replicates < 1) throw std::invalid_argument("replicate count must be >= 1");
    if (signals.bins() < horizon_end) {
        throw std::invalid_argument("signals cover " + std::to_string(signals.bins()) + " bins, simulation needs " +
                                    std::to_string(horizon_end));
    }
    if (history.bins() < horizon_start - 1) {
        throw std::invalid_argument("history must cover every bin before the horizon start");
    }
    if (history.platforms() != model.platforms() || history.opinions() != model.opinions()) {
        throw std::invalid_argument("history dimensions do not match the model");
    }
    if (signals.intervention_count() != model.interventions()) {
        throw std::invalid_argument("signal interventions do not match the model");
    }
    model.volume.validate(signals.per_opinion());
    model.share.validate(model.volume.mu);
}

namespace {

[[noreturn]] void explode(const std::string& what, int t, int p, double lambda, const Model& model) {
    std::ostringstream msg;
    msg << "simulation " << what << " at t=" << t << " platform=" << p << " intensity=" << lambda
        << " alpha_spectral_radius=" << spectral_radius(model.volume.alpha) << " theta=" << model.volume.theta;
    throw NumericalError(msg.str());
}

}  // namespace

SimulationPath simulate_path(const SimulationSpec& spec, int replicate) {
    const auto& model = spec.model;
    const auto& signals = spec.signals;
    const int P = model.platforms();
    const int M = model.opinions();
    const int T = spec.horizon_end;
    const double theta = model.volume.theta;

    SimulationPath path;
    path.counts = spec.history.slice(0, spec.horizon_start - 1).extended(T);
    path.shares = Array3({static_cast<std::size_t>(P), static_cast<std::size_t>(M), static_cast<std::size_t>(T)});
    path.intensity = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(T)});

    const Matrix xbar_raw = smoothed_interventions(signals, theta, T);
    const int K = model.interventions();
    Matrix xbar({static_cast<std::size_t>(K), static_cast<std::size_t>(T)});
    for (int k = 0; k < K; ++k)
        for (int b = 0; b < T; ++b) xbar(k, b) = model.scaling.xbar(k, xbar_raw(k, b));

    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(replicate)));
    // conv(q, j) = sum_{s<t} f(t-s) n^q_{j,s}; platform conv is the sum over j.
    Matrix conv({static_cast<std::size_t>(P), static_cast<std::size_t>(M)}, 0.0);
    Array3 z({static_cast<std::size_t>(P), static_cast<std::size_t>(M), 1});
    std::vector<double> tend(M), share(M);

    for (int b = 0; b < T; ++b) {
        if (b > 0) {
            for (int q = 0; q < P; ++q)
                for (int j = 0; j < M; ++j)
                    conv(q, j) = (1.0 - theta) * conv(q, j) + theta * static_cast<double>(path.counts.at(q, j, b - 1));
        }
        for (int q = 0; q < P; ++q)
            for (int j = 0; j < M; ++j) {
                double v = model.share.mu_split(q, j) * signals.exogenous(j, b);
                for (int r = 0; r < P; ++r) v += model.volume.alpha(q, r) * conv(r, j);
                z(q, j, 0) = model.scaling.lam(q, j, v);
            }
        for (int p = 0; p < P; ++p) {
            double lambda = exogenous_rate(model.volume, signals, p, b);
            for (int q = 0; q < P; ++q)
                for (int j = 0; j < M; ++j) lambda += model.volume.alpha(p, q) * conv(q, j);
            path.intensity(p, b) = lambda;
            if (!std::isfinite(lambda)) explode("produced a non-finite intensity", b + 1, p, lambda, model);

            for (int i = 0; i < M; ++i) {
                double value = 0.0;
                for (int k = 0; k < K; ++k) value += model.share.gamma(p, i, k) * xbar(k, b);
                for (int q = 0; q < P; ++q)
                    for (int j = 0; j < M; ++j) value += model.share.beta(p, q, i, j) * z(q, j, 0);
                tend[i] = value;
            }
            shares_from_tendencies(tend, share);
            for (int i = 0; i < M; ++i) path.shares(p, i, b) = share[i];

            if (b < spec.horizon_start - 1) continue;
            if (lambda > kCountCap) explode("exceeded the count cap (explosive parameters)", b + 1, p, lambda, model);
            for (int i = 0; i < M; ++i) {
                const std::int64_t n = emit_counts(lambda * share[i], rng);
                path.counts.set(p, i, b, n);
            }
        }
    }
    return path;
}

CountPanel simulate(const SimulationSpec& spec) {
    spec.validate();
    return simulate_path(spec, 0).counts;
}

Array3 realized_shares(const SimulationPath& path, int begin, int end) {
    const int P = path.counts.platforms();
    const int M = path.counts.opinions();
    Array3 out({static_cast<std::size_t>(P), static_cast<std::size_t>(M), static_cast<std::size_t>(end - begin)});
    for (int p = 0; p < P; ++p)
        for (int b = begin; b < end; ++b) {
            const auto total = path.counts.platform_total(p, b);
            for (int i = 0; i < M; ++i) {
                out(p, i, b - begin) = total > 0 ? static_cast<double>(path.counts.at(p, i, b)) / static_cast<double>(total)
                                                 : path.shares(p, i, b);
            }
        }
    return out;
}

namespace {

double aggregate(std::vector<double>& values, ReplicateAggregate how) {
    if (how == ReplicateAggregate::mean) {
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

Prediction predict(const SimulationSpec& spec, const PredictOptions& options) {
    spec.validate();
    const int P = spec.model.platforms();
    const int M = spec.model.opinions();
    const int begin = spec.horizon_start - 1;
    const int end = spec.horizon_end;
    const int width = end - begin;

    Prediction out;
    out.begin = spec.horizon_start;
    out.end = spec.horizon_end;
    out.replicates.resize(spec.replicates);
    std::atomic<int> done{0};
    parallel_for(static_cast<std::size_t>(spec.replicates), resolve_threads(spec.threads), [&](std::size_t r) {
        out.replicates[r] = simulate_path(spec, static_cast<int>(r));
        const int finished = ++done;
        if (options.progress) options.progress(finished, spec.replicates);
    });

    std::vector<Array3> realized;
    realized.reserve(out.replicates.size());
    for (const auto& path : out.replicates) realized.push_back(realized_shares(path, begin, end));

    out.volumes = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(width)});
    out.shares = Array3({static_cast<std::size_t>(P), static_cast<std::size_t>(M), static_cast<std::size_t>(width)});
    std::vector<double> buf(out.replicates.size());
    for (int p = 0; p < P; ++p) {
        for (int b = begin; b < end; ++b) {
            for (std::size_t r = 0; r < out.replicates.size(); ++r)
                buf[r] = static_cast<double>(out.replicates[r].counts.platform_total(p, b));
            out.volumes(p, b - begin) = aggregate(buf, options.aggregate);

            if (options.share_averaging == ShareAveraging::realized_mean) {
                for (int i = 0; i < M; ++i) {
                    for (std::size_t r = 0; r < realized.size(); ++r) buf[r] = realized[r](p, i, b - begin);
                    out.shares(p, i, b - begin) = aggregate(buf, options.aggregate);
                }
            } else {
                double total = 0.0;
                std::vector<double> per_opinion(M, 0.0);
                for (const auto& path : out.replicates)
                    for (int i = 0; i < M; ++i) per_opinion[i] += static_cast<double>(path.counts.at(p, i, b));
                for (double v : per_opinion) total += v;
                for (int i = 0; i < M; ++i) {
                    if (total > 0.0) {
                        out.shares(p, i, b - begin) = per_opinion[i] / total;
                    } else {
                        double s = 0.0;
                        for (const auto& path : out.replicates) s += path.shares(p, i, b);
                        out.shares(p, i, b - begin) = s / static_cast<double>(out.replicates.size());
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace omm
