#include "omm/evaluation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace omm {

void HoldoutSplit::validate() const {
    if (obs_begin < 1) throw std::invalid_argument("holdout: T_obs must start at bin 1 or later");
    if (obs_end < obs_begin) throw std::invalid_argument("holdout: T_obs is empty");
    if (pred_end <= obs_end) throw std::invalid_argument("holdout: T_pred is empty");
}

double smape(const Matrix& predicted, const Matrix& actual) {
    if (predicted.shape() != actual.shape()) throw std::invalid_argument("smape: shape mismatch");
    const std::size_t P = predicted.extent(0);
    const std::size_t W = predicted.extent(1);
    if (P == 0 || W == 0) throw std::invalid_argument("smape: empty prediction range");
    double total = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        double row = 0.0;
        for (std::size_t b = 0; b < W; ++b) {
            const double a = predicted(p, b);
            const double n = actual(p, b);
            const double denom = std::abs(a) + std::abs(n);
            if (denom > 0.0) row += std::abs(a - n) / denom;
        }
        total += 100.0 * row / static_cast<double>(W);
    }
    return total / static_cast<double>(P);
}

double kl_shares(std::span<const double> actual, std::span<const double> predicted, const KlOptions& options) {
    if (actual.size() != predicted.size()) throw std::invalid_argument("kl_shares: dimension mismatch");
    if (actual.empty()) throw std::invalid_argument("kl_shares: empty share vectors");
    if (!(options.epsilon >= 0.0)) throw std::invalid_argument("kl_shares: epsilon must be >= 0");
    const std::size_t M = actual.size();
    double za = 0.0;
    double zp = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        if (actual[i] < 0.0 || predicted[i] < 0.0 || !std::isfinite(actual[i]) || !std::isfinite(predicted[i]))
            throw std::invalid_argument("kl_shares: shares must be finite and nonnegative");
        za += actual[i] + options.epsilon;
        zp += predicted[i] + options.epsilon;
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
        const double s = (actual[i] + options.epsilon) / za;
        const double sbar = (predicted[i] + options.epsilon) / zp;
        if (s <= 0.0) continue;
        if (sbar <= 0.0) return std::numeric_limits<double>::infinity();
        kl += options.flipped ? s * std::log(sbar / s) : s * std::log(s / sbar);
    }
    return kl;
}

Matrix kl_series(const Array3& actual, const Array3& predicted, const KlOptions& options) {
    if (actual.shape() != predicted.shape()) throw std::invalid_argument("kl_series: shape mismatch");
    const std::size_t P = actual.extent(0);
    const std::size_t M = actual.extent(1);
    const std::size_t W = actual.extent(2);
    Matrix out({P, W});
    std::vector<double> a(M), b(M);
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t t = 0; t < W; ++t) {
            for (std::size_t i = 0; i < M; ++i) {
                a[i] = actual(p, i, t);
                b[i] = predicted(p, i, t);
            }
            out(p, t) = kl_shares(a, b, options);
        }
    return out;
}

namespace {

double rmse(const std::vector<double>& est, const std::vector<double>& truth, const char* type) {
    if (est.size() != truth.size()) throw std::invalid_argument(std::string("rmse_by_type: shape mismatch for ") + type);
    if (est.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) s += (est[i] - truth[i]) * (est[i] - truth[i]);
    return std::sqrt(s / static_cast<double>(est.size()));
}

}  // namespace

RmseByType rmse_by_type(std::span<const Model> estimates, const Model& truth) {
    if (estimates.empty()) throw std::invalid_argument("rmse_by_type: no estimate sets");
    const auto t = parameter_components(truth);
    RmseByType out;
    for (const auto& model : estimates) {
        const auto e = parameter_components(model);
        out.mu += rmse(e.at("mu_split"), t.at("mu_split"), "mu_split");
        out.alpha += rmse(e.at("alpha"), t.at("alpha"), "alpha");
        out.theta += rmse(e.at("theta"), t.at("theta"), "theta");
        out.gamma += rmse(e.at("gamma"), t.at("gamma"), "gamma");
        out.beta += rmse(e.at("beta"), t.at("beta"), "beta");
    }
    const double n = static_cast<double>(estimates.size());
    out.mu /= n;
    out.alpha /= n;
    out.theta /= n;
    out.gamma /= n;
    out.beta /= n;
    return out;
}

Array3 observed_shares(const CountPanel& counts, int begin, int end) {
    const int P = counts.platforms();
    const int M = counts.opinions();
    Array3 out({static_cast<std::size_t>(P), static_cast<std::size_t>(M), static_cast<std::size_t>(end - begin)});
    for (int p = 0; p < P; ++p)
        for (int b = begin; b < end; ++b) {
            const auto total = counts.platform_total(p, b);
            for (int i = 0; i < M; ++i)
                out(p, i, b - begin) = total > 0 ? static_cast<double>(counts.at(p, i, b)) / static_cast<double>(total)
                                                 : 1.0 / static_cast<double>(M);
        }
    return out;
}

namespace {

// Rethrows with a stage prefix, keeping the error category.
template <class F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const DataError& e) {
        throw DataError(std::string(stage) + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(stage) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string(stage) + ": " + e.what());
    }
}

}  // namespace

HoldoutReport run_holdout(const SignalSet& signals, const CountPanel& counts, const HoldoutSplit& split,
                          const HoldoutOptions& options) {
    split.validate();
    if (options.replicates < 1) throw std::invalid_argument("holdout: replicate count must be >= 1");
    if (counts.bins() < split.pred_end || signals.bins() < split.pred_end)
        throw DataError("holdout: dataset has " + std::to_string(counts.bins()) + " bins, split needs " +
                        std::to_string(split.pred_end));

    HoldoutReport report;
    report.split = split;
    const int obs0 = split.obs_begin - 1;
    const int obs1 = split.obs_end;
    const int pred0 = obs1;
    const int pred1 = split.pred_end;
    const int W = pred1 - pred0;
    const int P = counts.platforms();

    if (options.model) {
        report.model = *options.model;
    } else {
        report.fit = staged("fit", [&] {
            // The fit sees bins from obs_begin; signals are sliced alongside.
            const SignalSet train_signals = signals.slice(obs0, obs1);
            const std::vector<CountPanel> train{counts.slice(obs0, obs1)};
            return fit_model(train_signals, train, options.fit);
        });
        report.model = report.fit->model;
    }

    SimulationSpec spec{report.model, signals.slice(0, pred1), counts.slice(0, pred0), split.pred_begin(),
                        split.pred_end, options.replicates, options.seed, options.fit.threads};
    report.prediction = staged("predict", [&] { return predict(spec, options.predict); });

    report.actual_volumes = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(W)});
    for (int p = 0; p < P; ++p)
        for (int b = pred0; b < pred1; ++b)
            report.actual_volumes(p, b - pred0) = static_cast<double>(counts.platform_total(p, b));
    report.actual_shares = observed_shares(counts, pred0, pred1);

    staged("score", [&] {
        report.smape = smape(report.prediction.volumes, report.actual_volumes);
        Matrix baseline({static_cast<std::size_t>(P), static_cast<std::size_t>(W)});
        for (int p = 0; p < P; ++p) {
            double mean = 0.0;
            for (int b = obs0; b < obs1; ++b) mean += static_cast<double>(counts.platform_total(p, b));
            mean /= static_cast<double>(obs1 - obs0);
            for (int b = 0; b < W; ++b) baseline(p, b) = mean;
        }
        report.baseline_smape = smape(baseline, report.actual_volumes);
        report.kl = kl_series(report.actual_shares, report.prediction.shares, options.kl);
        const CountPanel upto = counts.slice(0, pred1);
        const SignalSet sig = signals.slice(0, pred1);
        report.tier1_holdout_loglik = loglik_tier1(report.model.volume, sig, upto, BinRange{pred0, pred1});
        report.tier2_holdout_loglik = loglik_tier2(report.model, sig, upto, 0.0, BinRange{pred0, pred1});
        return 0;
    });
    return report;
}

}  // namespace omm
