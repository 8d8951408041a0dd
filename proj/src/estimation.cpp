#include "omm/estimation.hpp"

#include "omm/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace omm {

std::string to_string(ParameterTransform transform) { return transform == ParameterTransform::log ? "log" : "box"; }

ParameterTransform parameter_transform_from_string(const std::string& name) {
    if (name == "log") return ParameterTransform::log;
    if (name == "box") return ParameterTransform::box;
    throw std::invalid_argument("unknown parameter transform '" + name + "' (expected log or box)");
}

void FitOptions::validate() const {
    if (max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(gradient_tolerance > 0.0)) throw std::invalid_argument("gradient_tolerance must be > 0");
    if (!(lambda_reg >= 0.0)) throw std::invalid_argument("lambda_reg must be >= 0");
    if (n_restarts < 1) throw std::invalid_argument("n_restarts must be >= 1");
}

namespace {

constexpr double kThetaMin = 1e-6;
constexpr double kScoreFloor = 1e-300;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_samples(const SignalSet& signals, std::span<const CountPanel> samples) {
    if (samples.empty()) throw std::invalid_argument("need at least one count panel");
    const auto& first = samples.front();
    for (const auto& s : samples) {
        if (s.platforms() != first.platforms() || s.opinions() != first.opinions() || s.bins() != first.bins()) {
            throw std::invalid_argument("count panels in a group must share dimensions");
        }
    }
    if (signals.bins() < first.bins()) throw std::invalid_argument("signals shorter than counts");
    if (signals.per_opinion() && static_cast<int>(signals.exogenous_series().size()) != first.opinions()) {
        throw std::invalid_argument("per-opinion signals need one exogenous series per opinion");
    }
}

double log_factorial_sum(const CountPanel& counts, bool platform_level, BinRange range) {
    const int end = range.resolved_end(counts.bins());
    double total = 0.0;
    for (int p = 0; p < counts.platforms(); ++p) {
        for (int b = range.begin; b < end; ++b) {
            if (platform_level) {
                total += std::lgamma(static_cast<double>(counts.platform_total(p, b)) + 1.0);
            } else {
                for (int i = 0; i < counts.opinions(); ++i) total += std::lgamma(static_cast<double>(counts.at(p, i, b)) + 1.0);
            }
        }
    }
    return total;
}

// Tier-1 log-likelihood of one panel, optionally accumulating the raw gradient.
double tier1_eval(const VolumeParams& params, const SignalSet& signals, const CountPanel& counts, BinRange range,
                  Tier1Gradient* grad) {
    const int P = params.platforms();
    const int T = counts.bins();
    const int end = range.resolved_end(T);
    if (range.begin < 0 || end > T || range.begin > end) throw std::out_of_range("likelihood range out of bounds");
    const auto trace = compute_volume_trace(params, signals, counts, grad != nullptr);
    double L = -log_factorial_sum(counts, true, range);
    for (int p = 0; p < P; ++p) {
        for (int b = range.begin; b < end; ++b) {
            const double n = static_cast<double>(counts.platform_total(p, b));
            const double lambda = trace.intensity(p, b);
            double w = 0.0;
            if (lambda < kIntensityFloor) {
                L += n * std::log(kIntensityFloor) - kIntensityFloor;
            } else {
                L += n * std::log(lambda) - lambda;
                w = n / lambda - 1.0;
            }
            if (!grad || w == 0.0) continue;
            if (signals.per_opinion()) {
                for (int j = 0; j < counts.opinions(); ++j) grad->mu_split(p, j) += w * signals.exogenous(j, b);
            } else {
                grad->mu[p] += w * signals.exogenous(0, b);
            }
            double dtheta = 0.0;
            for (int q = 0; q < P; ++q) {
                grad->alpha(p, q) += w * trace.conv(q, b);
                dtheta += params.alpha(p, q) * trace.conv_dtheta(q, b);
            }
            grad->theta += w * dtheta;
        }
    }
    return L;
}

Tier1Gradient zero_tier1_gradient(int P, int M, bool per_opinion) {
    Tier1Gradient g;
    g.mu.assign(P, 0.0);
    g.alpha = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(P)}, 0.0);
    if (per_opinion) g.mu_split = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(M)}, 0.0);
    return g;
}

}  // namespace

// --- tier 1 -----------------------------------------------------------------

double loglik_tier1(const VolumeParams& params, const SignalSet& signals, const CountPanel& counts, BinRange range) {
    params.validate(signals.per_opinion());
    check_samples(signals, std::span<const CountPanel>(&counts, 1));
    if (counts.platforms() != params.platforms()) throw std::invalid_argument("counts/params platform mismatch");
    return tier1_eval(params, signals, counts, range, nullptr);
}

double loglik_tier1(const VolumeParams& params, const SignalSet& signals, std::span<const CountPanel> samples) {
    double total = 0.0;
    for (const auto& s : samples) total += loglik_tier1(params, signals, s);
    return total;
}

Tier1Gradient grad_tier1(const VolumeParams& params, const SignalSet& signals, const CountPanel& counts) {
    params.validate(signals.per_opinion());
    check_samples(signals, std::span<const CountPanel>(&counts, 1));
    auto g = zero_tier1_gradient(params.platforms(), counts.opinions(), signals.per_opinion());
    (void)tier1_eval(params, signals, counts, {}, &g);
    return g;
}

Tier1Objective::Tier1Objective(const SignalSet& signals, std::span<const CountPanel> samples,
                               ParameterTransform transform)
    : signals_(signals), samples_(samples), transform_(transform) {
    check_samples(signals, samples);
    platforms_ = samples.front().platforms();
    opinions_ = samples.front().opinions();
    per_opinion_ = signals.per_opinion();
}

std::vector<double> Tier1Objective::pack(const VolumeParams& params) const {
    std::vector<double> x;
    const bool log_scale = transform_ == ParameterTransform::log;
    auto put = [&](double v) { x.push_back(log_scale ? std::log(std::max(v, kScoreFloor)) : v); };
    if (per_opinion_) {
        for (double v : params.mu_split.data()) put(v);
    } else {
        for (double v : params.mu) put(v);
    }
    for (double v : params.alpha.data()) put(v);
    if (log_scale) {
        const double th = std::clamp(params.theta, kThetaMin, 1.0 - 1e-12);
        x.push_back(std::log(th / (1.0 - th)));
    } else {
        x.push_back(params.theta);
    }
    return x;
}

VolumeParams Tier1Objective::unpack(std::span<const double> x) const {
    const bool log_scale = transform_ == ParameterTransform::log;
    auto get = [&](double v) { return log_scale ? std::exp(v) : v; };
    VolumeParams params;
    const auto P = static_cast<std::size_t>(platforms_);
    std::size_t at = 0;
    params.mu.assign(P, 0.0);
    if (per_opinion_) {
        params.mu_split = Matrix({P, static_cast<std::size_t>(opinions_)});
        for (auto& v : params.mu_split.data()) v = get(x[at++]);
        for (std::size_t p = 0; p < P; ++p)
            for (int j = 0; j < opinions_; ++j) params.mu[p] += params.mu_split(p, j);
    } else {
        for (auto& v : params.mu) v = get(x[at++]);
    }
    params.alpha = Matrix({P, P});
    for (auto& v : params.alpha.data()) v = get(x[at++]);
    params.theta = log_scale ? sigmoid(x[at]) : x[at];
    return params;
}

std::vector<double> Tier1Objective::lower_bounds() const {
    if (transform_ == ParameterTransform::log) return {};
    const std::size_t n_mu = per_opinion_ ? platforms_ * opinions_ : platforms_;
    std::vector<double> lb(n_mu + platforms_ * platforms_ + 1, 0.0);
    lb.back() = kThetaMin;
    return lb;
}

std::vector<double> Tier1Objective::upper_bounds() const {
    if (transform_ == ParameterTransform::log) return {};
    const std::size_t n_mu = per_opinion_ ? platforms_ * opinions_ : platforms_;
    std::vector<double> ub(n_mu + platforms_ * platforms_ + 1, std::numeric_limits<double>::infinity());
    ub.back() = 1.0;
    return ub;
}

double Tier1Objective::operator()(std::span<const double> x, std::span<double> grad) const {
    const auto params = unpack(x);
    auto g = zero_tier1_gradient(platforms_, opinions_, per_opinion_);
    double L = 0.0;
    for (const auto& s : samples_) L += tier1_eval(params, signals_, s, {}, &g);

    const bool log_scale = transform_ == ParameterTransform::log;
    std::size_t at = 0;
    if (per_opinion_) {
        for (std::size_t k = 0; k < g.mu_split.size(); ++k, ++at)
            grad[at] = g.mu_split.data()[k] * (log_scale ? params.mu_split.data()[k] : 1.0);
    } else {
        for (int p = 0; p < platforms_; ++p, ++at) grad[at] = g.mu[p] * (log_scale ? params.mu[p] : 1.0);
    }
    for (std::size_t k = 0; k < g.alpha.size(); ++k, ++at)
        grad[at] = g.alpha.data()[k] * (log_scale ? params.alpha.data()[k] : 1.0);
    grad[at] = g.theta * (log_scale ? params.theta * (1.0 - params.theta) : 1.0);
    return L;
}

namespace {

VolumeParams initial_volume(const SignalSet& signals, std::span<const CountPanel> samples) {
    const int P = samples.front().platforms();
    const int M = samples.front().opinions();
    const int T = samples.front().bins();
    VolumeParams init;
    init.theta = 0.5;
    init.alpha = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(P)}, 0.05);
    init.mu.assign(P, 0.0);
    auto mean_signal = [&](int j) {
        double m = 0.0;
        for (int b = 0; b < T; ++b) m += signals.exogenous(j, b);
        return std::max(m / T, 1e-12);
    };
    auto mean_count = [&](int p, int j) {
        double m = 0.0;
        for (const auto& s : samples)
            for (int b = 0; b < T; ++b)
                m += j < 0 ? static_cast<double>(s.platform_total(p, b)) : static_cast<double>(s.at(p, j, b));
        return m / (static_cast<double>(T) * static_cast<double>(samples.size()));
    };
    if (signals.per_opinion()) {
        init.mu_split = Matrix({static_cast<std::size_t>(P), static_cast<std::size_t>(M)});
        for (int p = 0; p < P; ++p) {
            for (int j = 0; j < M; ++j) {
                init.mu_split(p, j) = std::max(mean_count(p, j) / mean_signal(j), 1e-6);
                init.mu[p] += init.mu_split(p, j);
            }
        }
    } else {
        for (int p = 0; p < P; ++p) init.mu[p] = std::max(mean_count(p, -1) / mean_signal(0), 1e-6);
    }
    return init;
}

template <typename Pick>
int best_index(const std::vector<double>& logliks, Pick tie_key) {
    int best = 0;
    for (int r = 1; r < static_cast<int>(logliks.size()); ++r) {
        const double scale = 1e-9 * std::max(1.0, std::abs(logliks[best]));
        if (logliks[r] > logliks[best] + scale) {
            best = r;
        } else if (std::abs(logliks[r] - logliks[best]) <= scale && tie_key(r) < tie_key(best)) {
            best = r;
        }
    }
    return best;
}

constexpr int kNewtonMaxDim = 400;

OptimizerOptions optimizer_options(const FitOptions& options) {
    OptimizerOptions o;
    o.max_iterations = options.max_iterations;
    o.gradient_tolerance = options.gradient_tolerance;
    return o;
}

}  // namespace

Tier1Fit fit_tier1(const SignalSet& signals, std::span<const CountPanel> samples, const FitOptions& options) {
    options.validate();
    check_samples(signals, samples);
    if (samples.front().bins() < 2) throw std::invalid_argument("tier-1 fitting needs T >= 2");

    const Tier1Objective objective(signals, samples, options.parameter_transform);
    const VolumeParams start = options.warm_start ? options.warm_start->volume : initial_volume(signals, samples);
    const auto lower = objective.lower_bounds();
    const auto upper = objective.upper_bounds();

    std::vector<OptimizerResult> runs;
    std::vector<double> logliks;
    for (int r = 0; r < options.n_restarts; ++r) {
        VolumeParams init = start;
        if (r > 0) {
            Rng rng(derive_seed(options.seed, 1000 + r));
            std::normal_distribution<double> jitter(0.0, 1.0);
            for (auto& m : init.mu) m *= std::exp(0.3 * jitter(rng));
            if (!init.mu_split.empty()) {
                std::fill(init.mu.begin(), init.mu.end(), 0.0);
                for (std::size_t p = 0; p < init.mu_split.extent(0); ++p)
                    for (std::size_t j = 0; j < init.mu_split.extent(1); ++j) {
                        init.mu_split(p, j) *= std::exp(0.3 * jitter(rng));
                        init.mu[p] += init.mu_split(p, j);
                    }
            }
            for (auto& a : init.alpha.data()) a = 0.05 * std::exp(jitter(rng));
            const double logit = std::log(init.theta / (1.0 - std::min(init.theta, 1.0 - 1e-9)));
            init.theta = std::clamp(sigmoid(logit + 0.5 * jitter(rng)), 0.05, 0.95);
        }
        runs.push_back(maximize(objective, objective.pack(init), optimizer_options(options), lower, upper));
        logliks.push_back(runs.back().value);
    }
    const int best = best_index(logliks, [](int) { return 0.0; });
    const auto& run = runs[best];

    Tier1Fit fit;
    fit.params = objective.unpack(run.x);
    fit.loglik = loglik_tier1(fit.params, signals, samples);
    fit.diagnostics.converged = run.converged;
    fit.diagnostics.iterations = run.iterations;
    fit.diagnostics.gradient_norm = run.gradient_norm;
    fit.diagnostics.termination = run.termination;
    fit.diagnostics.restart_logliks = logliks;
    fit.diagnostics.best_restart = best;
    if (auto w = stability_warning(fit.params)) fit.diagnostics.warnings.push_back(*w);
    return fit;
}

// --- tier 2 -----------------------------------------------------------------

namespace {

// Precomputed per-sample quantities that stay fixed while tier-2 parameters move.
struct Tier2Sample {
    Array3 n;         // P×M×T counts
    Matrix n_total;   // P×T
    Matrix lambda;    // P×T floored platform intensity
    Matrix log_lambda;
    Array3 endogenous;  // P×M×T
    Matrix xbar;        // K×T transformed
    std::vector<double> log_factorials;  // per bin, summed over p and i
};

class Tier2Workspace {
public:
    Tier2Workspace(const SignalSet& signals, std::span<const CountPanel> samples, const VolumeParams& volume,
                   FeatureScaling scaling)
        : signals_(signals), scaling_(std::move(scaling)) {
        check_samples(signals, samples);
        P_ = samples.front().platforms();
        M_ = samples.front().opinions();
        T_ = samples.front().bins();
        K_ = signals.intervention_count();
        if (volume.platforms() != P_) throw std::invalid_argument("tier-1 parameters do not match panel platforms");
        const Matrix xbar_raw = smoothed_interventions(signals, volume.theta, T_);
        const auto shape3 = std::array<std::size_t, 3>{static_cast<std::size_t>(P_), static_cast<std::size_t>(M_),
                                                       static_cast<std::size_t>(T_)};
        const auto shape2 = std::array<std::size_t, 2>{static_cast<std::size_t>(P_), static_cast<std::size_t>(T_)};
        for (const auto& counts : samples) {
            Tier2Sample s;
            s.n = Array3(shape3);
            s.n_total = Matrix(shape2);
            s.lambda = Matrix(shape2);
            s.log_lambda = Matrix(shape2);
            const auto trace = compute_volume_trace(volume, signals, counts);
            for (int p = 0; p < P_; ++p)
                for (int b = 0; b < T_; ++b) {
                    double total = 0.0;
                    for (int i = 0; i < M_; ++i) {
                        s.n(p, i, b) = static_cast<double>(counts.at(p, i, b));
                        total += s.n(p, i, b);
                    }
                    s.n_total(p, b) = total;
                    s.lambda(p, b) = std::max(trace.intensity(p, b), kIntensityFloor);
                    s.log_lambda(p, b) = std::log(s.lambda(p, b));
                }
            s.endogenous = conditional_endogenous(volume, counts);
            s.xbar = Matrix({static_cast<std::size_t>(K_), static_cast<std::size_t>(T_)});
            for (int k = 0; k < K_; ++k)
                for (int b = 0; b < T_; ++b) s.xbar(k, b) = scaling_.xbar(k, xbar_raw(k, b));
            s.log_factorials.resize(T_);
            for (int b = 0; b < T_; ++b) s.log_factorials[b] = log_factorial_sum(counts, false, {b, b + 1});
            samples_.push_back(std::move(s));
        }
    }

    [[nodiscard]] int platforms() const { return P_; }
    [[nodiscard]] int opinions() const { return M_; }
    [[nodiscard]] int interventions() const { return K_; }
    [[nodiscard]] const FeatureScaling& scaling() const { return scaling_; }

    double evaluate(const ShareParams& params, double lambda_reg, BinRange range, Tier2Gradient* grad) const {
        const int end = range.resolved_end(T_);
        if (range.begin < 0 || end > T_ || range.begin > end) throw std::out_of_range("likelihood range out of bounds");
        if (grad) {
            grad->mu_split = Matrix(params.mu_split.shape(), 0.0);
            grad->gamma = Array3(params.gamma.shape(), 0.0);
            grad->beta = Array4(params.beta.shape(), 0.0);
        }
        const auto shape3 = std::array<std::size_t, 3>{static_cast<std::size_t>(P_), static_cast<std::size_t>(M_),
                                                       static_cast<std::size_t>(T_)};
        Array3 z(shape3);
        Array3 dz(shape3);
        std::vector<double> tend(M_), log_share(M_);
        double L = 0.0;
        for (const auto& s : samples_) {
            for (int q = 0; q < P_; ++q)
                for (int j = 0; j < M_; ++j)
                    for (int b = 0; b < T_; ++b)
                        z(q, j, b) = scaling_.lam(q, j, params.mu_split(q, j) * signals_.exogenous(j, b) + s.endogenous(q, j, b));
            if (grad) dz.fill(0.0);
            for (int b = range.begin; b < end; ++b) L -= s.log_factorials[b];
            for (int p = 0; p < P_; ++p) {
                for (int b = range.begin; b < end; ++b) {
                    tendencies_at(params, z, s.xbar, p, b, tend);
                    const double top = *std::max_element(tend.begin(), tend.end());
                    double norm = 0.0;
                    for (int i = 0; i < M_; ++i) norm += std::exp(tend[i] - top);
                    const double log_norm = top + std::log(norm);
                    if (!std::isfinite(log_norm)) throw NumericalError("non-finite tendencies in tier-2 likelihood");
                    for (int i = 0; i < M_; ++i) {
                        log_share[i] = tend[i] - log_norm;
                        if (s.n(p, i, b) > 0.0) L += s.n(p, i, b) * (s.log_lambda(p, b) + log_share[i]);
                    }
                    L -= s.lambda(p, b);
                    if (!grad) continue;
                    for (int i = 0; i < M_; ++i) {
                        const double g = s.n(p, i, b) - s.n_total(p, b) * std::exp(log_share[i]);
                        if (g == 0.0) continue;
                        for (int k = 0; k < K_; ++k) grad->gamma(p, i, k) += g * s.xbar(k, b);
                        for (int q = 0; q < P_; ++q)
                            for (int j = 0; j < M_; ++j) {
                                grad->beta(p, q, i, j) += g * z(q, j, b);
                                dz(q, j, b) += g * params.beta(p, q, i, j);
                            }
                    }
                }
            }
            if (!grad) continue;
            for (int q = 0; q < P_; ++q)
                for (int j = 0; j < M_; ++j)
                    for (int b = 0; b < T_; ++b) {
                        if (dz(q, j, b) == 0.0) continue;
                        const double v = params.mu_split(q, j) * signals_.exogenous(j, b) + s.endogenous(q, j, b);
                        grad->mu_split(q, j) += dz(q, j, b) * scaling_.lam_slope(q, j, v) * signals_.exogenous(j, b);
                    }
        }
        double ridge = 0.0;
        for (double g : params.gamma.data()) ridge += g * g;
        L -= lambda_reg * ridge;
        if (grad) {
            for (std::size_t k = 0; k < params.gamma.size(); ++k)
                grad->gamma.data()[k] -= 2.0 * lambda_reg * params.gamma.data()[k];
        }
        return L;
    }

private:
    const SignalSet& signals_;
    FeatureScaling scaling_;
    std::vector<Tier2Sample> samples_;
    int P_{0}, M_{0}, T_{0}, K_{0};
};

void check_model_shapes(const Model& model, const CountPanel& counts, const SignalSet& signals) {
    model.volume.validate(signals.per_opinion());
    model.share.validate(model.volume.mu);
    if (counts.platforms() != model.platforms() || counts.opinions() != model.opinions()) {
        throw std::invalid_argument("counts do not match model dimensions");
    }
    if (signals.intervention_count() != model.interventions()) {
        throw std::invalid_argument("signals carry " + std::to_string(signals.intervention_count()) +
                                    " interventions, model expects " + std::to_string(model.interventions()));
    }
}

}  // namespace

double loglik_tier2(const Model& model, const SignalSet& signals, const CountPanel& counts, double lambda_reg,
                    BinRange range) {
    check_model_shapes(model, counts, signals);
    const Tier2Workspace ws(signals, std::span<const CountPanel>(&counts, 1), model.volume, model.scaling);
    return ws.evaluate(model.share, lambda_reg, range, nullptr);
}

double loglik_tier2(const Model& model, const SignalSet& signals, std::span<const CountPanel> samples,
                    double lambda_reg) {
    for (const auto& s : samples) check_model_shapes(model, s, signals);
    const Tier2Workspace ws(signals, samples, model.volume, model.scaling);
    return ws.evaluate(model.share, lambda_reg, {}, nullptr);
}

Tier2Gradient grad_tier2(const Model& model, const SignalSet& signals, const CountPanel& counts, double lambda_reg) {
    check_model_shapes(model, counts, signals);
    const Tier2Workspace ws(signals, std::span<const CountPanel>(&counts, 1), model.volume, model.scaling);
    Tier2Gradient g;
    (void)ws.evaluate(model.share, lambda_reg, {}, &g);
    return g;
}

struct Tier2Objective::Impl {
    Tier2Workspace workspace;
    VolumeParams volume;
    double lambda_reg;
    bool fit_interventions;
    bool free_split;
};

Tier2Objective::Tier2Objective(const SignalSet& signals, std::span<const CountPanel> samples,
                               const VolumeParams& volume_hat, FeatureScaling scaling, double lambda_reg,
                               bool fit_interventions)
    : impl_(std::make_unique<Impl>(Impl{Tier2Workspace(signals, samples, volume_hat, std::move(scaling)), volume_hat,
                                        lambda_reg, fit_interventions, !signals.per_opinion()})) {}

Tier2Objective::~Tier2Objective() = default;

std::size_t Tier2Objective::dimension() const {
    const auto P = static_cast<std::size_t>(impl_->workspace.platforms());
    const auto M = static_cast<std::size_t>(impl_->workspace.opinions());
    const auto K = static_cast<std::size_t>(impl_->workspace.interventions());
    return (impl_->free_split ? P * (M - 1) : 0) + (impl_->fit_interventions ? P * M * K : 0) + P * P * (M - 1) * M;
}

std::vector<double> Tier2Objective::pack(const ShareParams& params) const {
    const int P = impl_->workspace.platforms();
    const int M = impl_->workspace.opinions();
    std::vector<double> x;
    x.reserve(dimension());
    if (impl_->free_split) {
        for (int p = 0; p < P; ++p) {
            const double last = std::log(std::max(params.mu_split(p, M - 1), kScoreFloor));
            for (int j = 0; j + 1 < M; ++j) x.push_back(std::log(std::max(params.mu_split(p, j), kScoreFloor)) - last);
        }
    }
    if (impl_->fit_interventions) x.insert(x.end(), params.gamma.data().begin(), params.gamma.data().end());
    // Shares only see beta differences across i, so the last opinion is the reference.
    for (int p = 0; p < P; ++p)
        for (int q = 0; q < P; ++q)
            for (int i = 0; i + 1 < M; ++i)
                for (int j = 0; j < M; ++j) x.push_back(params.beta(p, q, i, j) - params.beta(p, q, M - 1, j));
    return x;
}

ShareParams Tier2Objective::unpack(std::span<const double> x) const {
    const int P = impl_->workspace.platforms();
    const int M = impl_->workspace.opinions();
    const int K = impl_->workspace.interventions();
    ShareParams params = ShareParams::zeros(P, M, K);
    std::size_t at = 0;
    if (impl_->free_split) {
        std::vector<double> scores(M);
        for (int p = 0; p < P; ++p) {
            for (int j = 0; j + 1 < M; ++j) scores[j] = x[at++];
            scores[M - 1] = 0.0;
            const auto w = shares_from_tendencies(scores);
            for (int j = 0; j < M; ++j) params.mu_split(p, j) = impl_->volume.mu[p] * w[j];
        }
    } else {
        params.mu_split = impl_->volume.mu_split;
    }
    if (impl_->fit_interventions) {
        for (auto& v : params.gamma.data()) v = x[at++];
    }
    for (int p = 0; p < P; ++p)
        for (int q = 0; q < P; ++q)
            for (int i = 0; i + 1 < M; ++i)
                for (int j = 0; j < M; ++j) params.beta(p, q, i, j) = x[at++];
    return params;
}

double Tier2Objective::operator()(std::span<const double> x, std::span<double> grad) const {
    const int P = impl_->workspace.platforms();
    const int M = impl_->workspace.opinions();
    const auto params = unpack(x);
    Tier2Gradient g;
    const double L = impl_->workspace.evaluate(params, impl_->lambda_reg, {}, &g);
    std::size_t at = 0;
    if (impl_->free_split) {
        for (int p = 0; p < P; ++p) {
            // mu_j = mu_hat w_j, d mu_j / d score_l = mu_j (delta_jl - w_l)
            double weighted = 0.0;
            for (int j = 0; j < M; ++j) weighted += g.mu_split(p, j) * params.mu_split(p, j);
            const double mu_hat = impl_->volume.mu[p];
            for (int l = 0; l + 1 < M; ++l) {
                const double w_l = mu_hat > 0.0 ? params.mu_split(p, l) / mu_hat : 0.0;
                grad[at++] = g.mu_split(p, l) * params.mu_split(p, l) - w_l * weighted;
            }
        }
    }
    if (impl_->fit_interventions) {
        for (double v : g.gamma.data()) grad[at++] = v;
    }
    for (int p = 0; p < P; ++p)
        for (int q = 0; q < P; ++q)
            for (int i = 0; i + 1 < M; ++i)
                for (int j = 0; j < M; ++j) grad[at++] = g.beta(p, q, i, j);
    return L;
}

namespace {

Matrix empirical_split(std::span<const CountPanel> samples, const VolumeParams& volume) {
    const int P = samples.front().platforms();
    const int M = samples.front().opinions();
    Matrix split({static_cast<std::size_t>(P), static_cast<std::size_t>(M)});
    for (int p = 0; p < P; ++p) {
        std::vector<double> totals(M, 0.0);
        double all = 0.0;
        for (const auto& s : samples)
            for (int j = 0; j < M; ++j)
                for (int b = 0; b < s.bins(); ++b) totals[j] += static_cast<double>(s.at(p, j, b));
        for (double v : totals) all += v;
        for (int j = 0; j < M; ++j) {
            // Smoothed so that unseen opinions keep a positive baseline.
            const double share = (totals[j] + 0.5) / (all + 0.5 * M);
            split(p, j) = volume.mu[p] * share;
        }
    }
    return split;
}

double coupling_size(const ShareParams& params) {
    double total = 0.0;
    for (double v : params.gamma.data()) total += std::abs(v);
    for (double v : params.beta.data()) total += std::abs(v);
    return total;
}

}  // namespace

Tier2Fit fit_tier2(const SignalSet& signals, std::span<const CountPanel> samples, const VolumeParams& volume_hat,
                   const FitOptions& options) {
    options.validate();
    check_samples(signals, samples);
    const int P = samples.front().platforms();
    const int M = samples.front().opinions();
    const int K = signals.intervention_count();
    if (M < 2) throw std::invalid_argument("tier-2 fitting needs at least two opinions (M = 1 has no market shares)");
    volume_hat.validate(signals.per_opinion());

    ShareParams start = ShareParams::zeros(P, M, K);
    start.mu_split = signals.per_opinion() ? volume_hat.mu_split : empirical_split(samples, volume_hat);
    FeatureScaling scaling;
    if (options.warm_start) {
        start = options.warm_start->share;
        if (!signals.per_opinion()) {
            // Keep the warm split's proportions but honour the current mu_hat.
            for (int p = 0; p < P; ++p) {
                double row = 0.0;
                for (int j = 0; j < M; ++j) row += start.mu_split(p, j);
                for (int j = 0; j < M; ++j)
                    start.mu_split(p, j) = row > 0.0 ? volume_hat.mu[p] * start.mu_split(p, j) / row : volume_hat.mu[p] / M;
            }
        }
        scaling = options.warm_start->scaling;
    } else {
        std::vector<Array3> lam_raw;
        std::vector<Matrix> xbar_raw;
        for (const auto& s : samples) {
            lam_raw.push_back(conditional_intensities(start.mu_split, volume_hat, signals, s));
            xbar_raw.push_back(smoothed_interventions(signals, volume_hat.theta, s.bins()));
        }
        scaling = fit_feature_scaling(lam_raw, xbar_raw, options.feature_mode);
    }
    if (!options.fit_interventions) start.gamma.fill(0.0);

    const Tier2Objective objective(signals, samples, volume_hat, scaling, options.lambda_reg, options.fit_interventions);
    std::vector<OptimizerResult> runs;
    std::vector<ShareParams> fitted;
    std::vector<double> logliks;
    for (int r = 0; r < options.n_restarts; ++r) {
        auto x0 = objective.pack(start);
        if (r > 0) {
            Rng rng(derive_seed(options.seed, 2000 + r));
            std::normal_distribution<double> jitter(0.0, 1.0);
            const std::size_t n_scores = signals.per_opinion() ? 0 : static_cast<std::size_t>(P * (M - 1));
            for (std::size_t k = 0; k < x0.size(); ++k) x0[k] += (k < n_scores ? 0.1 : 0.05) * jitter(rng);
        }
        const Objective f = [&objective](std::span<const double> x, std::span<double> g) { return objective(x, g); };
        auto run = maximize_scaled(f, std::move(x0), optimizer_options(options));
        // The split scores and beta trade off along a curved ridge that
        // first-order steps crawl along; small problems finish with Newton.
        if (!run.converged && static_cast<int>(run.x.size()) <= kNewtonMaxDim) {
            auto polish = maximize_newton(f, run.x, optimizer_options(options));
            polish.iterations += run.iterations;
            polish.trace.insert(polish.trace.begin(), run.trace.begin(), run.trace.end() - 1);
            run = std::move(polish);
        }
        runs.push_back(std::move(run));
        fitted.push_back(objective.unpack(runs.back().x));
        logliks.push_back(runs.back().value);
    }
    const int best = best_index(logliks, [&](int r) { return coupling_size(fitted[r]); });
    const auto& run = runs[best];

    Tier2Fit fit;
    fit.params = fitted[best];
    // Report beta centred across i; the likelihood does not change.
    auto& beta = fit.params.beta;
    for (int p = 0; p < P; ++p)
        for (int q = 0; q < P; ++q)
            for (int j = 0; j < M; ++j) {
                double mean = 0.0;
                for (int i = 0; i < M; ++i) mean += beta(p, q, i, j) / M;
                for (int i = 0; i < M; ++i) beta(p, q, i, j) -= mean;
            }
    fit.scaling = scaling;
    fit.loglik = run.value;
    fit.diagnostics.converged = run.converged;
    fit.diagnostics.iterations = run.iterations;
    fit.diagnostics.gradient_norm = run.gradient_norm;
    fit.diagnostics.termination = run.termination;
    fit.diagnostics.restart_logliks = logliks;
    fit.diagnostics.best_restart = best;
    fit.diagnostics.warnings = scaling.warnings;
    return fit;
}

// --- joint fitting ------------------------------------------------------------

FitResult fit_model(const SignalSet& signals, std::span<const CountPanel> samples, const FitOptions& options) {
    auto tier1 = fit_tier1(signals, samples, options);
    auto tier2 = fit_tier2(signals, samples, tier1.params, options);
    FitResult result;
    result.model = Model{tier1.params, tier2.params, tier2.scaling};
    result.loglik1 = tier1.loglik;
    result.loglik2 = loglik_tier2(result.model, signals, samples, options.lambda_reg);
    result.converged = tier1.diagnostics.converged && tier2.diagnostics.converged;
    result.iterations = tier1.diagnostics.iterations + tier2.diagnostics.iterations;
    result.gradient_norm = std::max(tier1.diagnostics.gradient_norm, tier2.diagnostics.gradient_norm);
    result.tier1 = std::move(tier1.diagnostics);
    result.tier2 = std::move(tier2.diagnostics);
    return result;
}

std::map<std::string, std::vector<double>> parameter_components(const Model& model) {
    return {
        {"mu_split", model.share.mu_split.data()},
        {"alpha", model.volume.alpha.data()},
        {"theta", {model.volume.theta}},
        {"gamma", model.share.gamma.data()},
        {"beta", model.share.beta.data()},
    };
}

JointFitSummary joint_fit(const SignalSet& signals, const std::vector<std::vector<CountPanel>>& groups,
                          const FitOptions& options) {
    if (groups.empty()) throw std::invalid_argument("joint fit needs at least one group");
    for (const auto& g : groups) {
        check_samples(signals, g);
        const auto& a = g.front();
        const auto& b = groups.front().front();
        if (a.platforms() != b.platforms() || a.opinions() != b.opinions() || a.bins() != b.bins()) {
            throw std::invalid_argument("groups must share panel dimensions");
        }
    }
    JointFitSummary summary;
    summary.fits.resize(groups.size());
    FitOptions per_group = options;
    parallel_for(groups.size(), resolve_threads(options.threads), [&](std::size_t g) {
        FitOptions o = per_group;
        o.seed = derive_seed(options.seed, g);
        summary.fits[g] = fit_model(signals, groups[g], o);
    });

    std::map<std::string, std::vector<std::vector<double>>> columns;
    for (const auto& fit : summary.fits) {
        for (auto& [name, values] : parameter_components(fit.model)) {
            auto& cols = columns[name];
            cols.resize(values.size());
            for (std::size_t c = 0; c < values.size(); ++c) cols[c].push_back(values[c]);
        }
    }
    for (auto& [name, cols] : columns) {
        auto& mean = summary.mean[name];
        auto& median = summary.median[name];
        for (auto& col : cols) {
            mean.push_back(std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size()));
            std::sort(col.begin(), col.end());
            const std::size_t n = col.size();
            median.push_back(n % 2 ? col[n / 2] : 0.5 * (col[n / 2 - 1] + col[n / 2]));
        }
    }
    return summary;
}

}  // namespace omm
