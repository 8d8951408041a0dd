#include "omm/share_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace omm {

std::string to_string(FeatureMode mode) { return mode == FeatureMode::standardized ? "standardized" : "raw"; }

FeatureMode feature_mode_from_string(const std::string& name) {
    if (name == "standardized") return FeatureMode::standardized;
    if (name == "raw") return FeatureMode::raw;
    throw std::invalid_argument("unknown feature mode '" + name + "' (expected standardized or raw)");
}

FeatureScaling FeatureScaling::identity(int platforms, int opinions, int interventions) {
    FeatureScaling s;
    s.log_scale = false;
    const std::array<std::size_t, 2> shape{static_cast<std::size_t>(platforms), static_cast<std::size_t>(opinions)};
    s.lam_mean = Matrix(shape, 0.0);
    s.lam_sd = Matrix(shape, 1.0);
    s.xbar_mean.assign(interventions, 0.0);
    s.xbar_sd.assign(interventions, 1.0);
    return s;
}

ShareParams ShareParams::zeros(int platforms, int opinions, int interventions) {
    const auto P = static_cast<std::size_t>(platforms);
    const auto M = static_cast<std::size_t>(opinions);
    const auto K = static_cast<std::size_t>(interventions);
    return ShareParams{Matrix({P, M}, 0.0), Array3({P, M, K}, 0.0), Array4({P, P, M, M}, 0.0)};
}

void ShareParams::validate(const std::vector<double>& mu) const {
    const auto P = mu.size();
    const auto M = mu_split.extent(1);
    if (mu_split.extent(0) != P) throw std::invalid_argument("mu_split must have P rows");
    if (gamma.extent(0) != P || gamma.extent(1) != M) throw std::invalid_argument("gamma must be P x M x K");
    if (beta.extent(0) != P || beta.extent(1) != P || beta.extent(2) != M || beta.extent(3) != M) {
        throw std::invalid_argument("beta must be P x P x M x M");
    }
    for (double v : gamma.data())
        if (!std::isfinite(v)) throw std::invalid_argument("gamma entries must be finite");
    for (double v : beta.data())
        if (!std::isfinite(v)) throw std::invalid_argument("beta entries must be finite");
    for (std::size_t p = 0; p < P; ++p) {
        double total = 0.0;
        for (std::size_t j = 0; j < M; ++j) {
            if (!(mu_split(p, j) >= 0.0)) throw std::invalid_argument("mu_split entries must be >= 0");
            total += mu_split(p, j);
        }
        if (std::abs(total - mu[p]) > 1e-9 * std::max(1.0, mu[p])) {
            throw std::invalid_argument("mu_split row " + std::to_string(p) + " sums to " + std::to_string(total) +
                                        ", expected mu = " + std::to_string(mu[p]));
        }
    }
}

namespace {

// Two-pass mean/sd over the pooled values; returns {mean, sd}.
std::pair<double, double> mean_sd(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 1.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

constexpr double kMinFeatureSd = 1e-12;

}  // namespace

FeatureScaling fit_feature_scaling(std::span<const Array3> lam_raw, std::span<const Matrix> xbar_raw,
                                   FeatureMode mode) {
    if (lam_raw.empty()) throw std::invalid_argument("feature scaling needs at least one panel");
    const int P = static_cast<int>(lam_raw.front().extent(0));
    const int M = static_cast<int>(lam_raw.front().extent(1));
    const int K = xbar_raw.empty() ? 0 : static_cast<int>(xbar_raw.front().extent(0));
    FeatureScaling s = FeatureScaling::identity(P, M, K);
    if (mode == FeatureMode::raw) return s;
    s.log_scale = true;

    std::vector<double> pool;
    for (int q = 0; q < P; ++q) {
        for (int j = 0; j < M; ++j) {
            pool.clear();
            for (const auto& panel : lam_raw)
                for (std::size_t b = 0; b < panel.extent(2); ++b) pool.push_back(std::log1p(panel(q, j, b)));
            auto [mean, sd] = mean_sd(pool);
            s.lam_mean(q, j) = mean;
            if (sd < kMinFeatureSd) {
                sd = 1.0;
                s.warnings.push_back("lambda(t|j) feature for platform " + std::to_string(q) + ", opinion " +
                                     std::to_string(j) + " has zero variance; using sd = 1");
            }
            s.lam_sd(q, j) = sd;
        }
    }
    for (int k = 0; k < K; ++k) {
        pool.clear();
        for (const auto& panel : xbar_raw)
            for (std::size_t b = 0; b < panel.extent(1); ++b) pool.push_back(panel(k, b));
        auto [mean, sd] = mean_sd(pool);
        s.xbar_mean[k] = mean;
        if (sd < kMinFeatureSd) {
            sd = 1.0;
            s.warnings.push_back("smoothed intervention " + std::to_string(k) + " has zero variance; using sd = 1");
        }
        s.xbar_sd[k] = sd;
    }
    return s;
}

Matrix smoothed_interventions(const SignalSet& signals, double theta, int bins) {
    const int K = signals.intervention_count();
    if (signals.bins() < bins) throw std::invalid_argument("signals shorter than requested feature window");
    Matrix out({static_cast<std::size_t>(K), static_cast<std::size_t>(bins)});
    for (int k = 0; k < K; ++k) {
        const auto& x = signals.interventions()[k];
        const auto conv = convolve_series(std::span<const double>(x.data(), bins), theta);
        for (int b = 0; b < bins; ++b) out(k, b) = conv[b];
    }
    return out;
}

FeaturePanel apply_scaling(const Array3& lam_raw, const Matrix& xbar_raw, const FeatureScaling& scaling) {
    FeaturePanel f{Array3(lam_raw.shape()), Matrix(xbar_raw.shape()), scaling};
    for (std::size_t q = 0; q < lam_raw.extent(0); ++q)
        for (std::size_t j = 0; j < lam_raw.extent(1); ++j)
            for (std::size_t b = 0; b < lam_raw.extent(2); ++b)
                f.lam_cond(q, j, b) = scaling.lam(static_cast<int>(q), static_cast<int>(j), lam_raw(q, j, b));
    for (std::size_t k = 0; k < xbar_raw.extent(0); ++k)
        for (std::size_t b = 0; b < xbar_raw.extent(1); ++b)
            f.xbar_std(k, b) = scaling.xbar(static_cast<int>(k), xbar_raw(k, b));
    return f;
}

FeaturePanel build_features(const Matrix& mu_split, const VolumeParams& volume, const SignalSet& signals,
                            const CountPanel& history, FeatureMode mode) {
    const Array3 lam = conditional_intensities(mu_split, volume, signals, history);
    const Matrix xbar = smoothed_interventions(signals, volume.theta, history.bins());
    const auto scaling = fit_feature_scaling(std::span<const Array3>(&lam, 1), std::span<const Matrix>(&xbar, 1), mode);
    return apply_scaling(lam, xbar, scaling);
}

FeaturePanel build_features(const Matrix& mu_split, const VolumeParams& volume, const SignalSet& signals,
                            const CountPanel& history, const FeatureScaling& scaling) {
    const Array3 lam = conditional_intensities(mu_split, volume, signals, history);
    const Matrix xbar = smoothed_interventions(signals, volume.theta, history.bins());
    return apply_scaling(lam, xbar, scaling);
}

void tendencies_at(const ShareParams& params, const Array3& lam_cond, const Matrix& xbar_std, int p, int b,
                   std::span<double> out) {
    const auto P = params.beta.extent(1);
    const auto M = params.beta.extent(2);
    const auto K = params.gamma.extent(2);
    for (std::size_t i = 0; i < M; ++i) {
        double value = 0.0;
        for (std::size_t k = 0; k < K; ++k) value += params.gamma(p, i, k) * xbar_std(k, b);
        for (std::size_t q = 0; q < P; ++q)
            for (std::size_t j = 0; j < M; ++j) value += params.beta(p, q, i, j) * lam_cond(q, j, b);
        out[i] = value;
    }
}

double tendency(const ShareParams& params, const FeaturePanel& features, int p, int i, int t) {
    const int T = static_cast<int>(features.lam_cond.extent(2));
    if (t < 1 || t > T) throw std::out_of_range("tendency time outside feature window");
    const int M = static_cast<int>(params.beta.extent(2));
    if (p < 0 || p >= static_cast<int>(params.beta.extent(0)) || i < 0 || i >= M) {
        throw std::out_of_range("tendency index out of range");
    }
    std::vector<double> all(M);
    tendencies_at(params, features.lam_cond, features.xbar_std, p, t - 1, all);
    return all[i];
}

void shares_from_tendencies(std::span<const double> tendencies, std::span<double> out) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : tendencies) {
        if (!std::isfinite(v)) throw NumericalError("non-finite tendency in share computation");
        top = std::max(top, v);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < tendencies.size(); ++i) {
        out[i] = std::exp(tendencies[i] - top);
        total += out[i];
    }
    for (std::size_t i = 0; i < tendencies.size(); ++i) out[i] /= total;
}

std::vector<double> shares_from_tendencies(std::span<const double> tendencies) {
    if (tendencies.empty()) throw std::invalid_argument("need at least one tendency");
    std::vector<double> out(tendencies.size());
    shares_from_tendencies(tendencies, out);
    return out;
}

Array3 compute_shares(const ShareParams& params, const FeaturePanel& features) {
    const auto P = params.beta.extent(0);
    const auto M = params.beta.extent(2);
    const auto T = features.lam_cond.extent(2);
    Array3 s({P, M, T});
    std::vector<double> tend(M);
    std::vector<double> share(M);
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t b = 0; b < T; ++b) {
            tendencies_at(params, features.lam_cond, features.xbar_std, static_cast<int>(p), static_cast<int>(b), tend);
            shares_from_tendencies(tend, share);
            for (std::size_t i = 0; i < M; ++i) s(p, i, b) = share[i];
        }
    }
    return s;
}

double opinion_intensity(const Model& model, const SignalSet& signals, const CountPanel& history, int p, int i,
                         int t) {
    const double lambda = platform_intensity(model.volume, signals, history, p, t);
    // Features at t only read history before t.
    const CountPanel window = history.slice(0, t - 1).extended(t);
    const auto features = build_features(model.share.mu_split, model.volume, signals, window, model.scaling);
    const int M = model.opinions();
    std::vector<double> tend(M);
    tendencies_at(model.share, features.lam_cond, features.xbar_std, p, t - 1, tend);
    const auto share = shares_from_tendencies(tend);
    return lambda * share.at(i);
}

}  // namespace omm
