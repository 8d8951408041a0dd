#include "omm/volume_model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace omm {

void VolumeParams::validate(bool per_opinion) const {
    const auto P = mu.size();
    if (P == 0) throw std::invalid_argument("volume params need at least one platform");
    if (alpha.extent(0) != P || alpha.extent(1) != P) throw std::invalid_argument("alpha must be P x P");
    for (double m : mu) {
        if (!(m >= 0.0) || !std::isfinite(m)) throw std::invalid_argument("mu entries must be finite and >= 0");
    }
    for (double a : alpha.data()) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw std::invalid_argument("alpha entries must be finite and >= 0");
    }
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("theta must lie in (0, 1]");
    if (per_opinion) {
        if (mu_split.extent(0) != P) throw std::invalid_argument("per-opinion mode requires a P x M mu_split");
        for (std::size_t p = 0; p < P; ++p) {
            double total = 0.0;
            for (std::size_t j = 0; j < mu_split.extent(1); ++j) {
                if (mu_split(p, j) < 0.0) throw std::invalid_argument("mu_split entries must be >= 0");
                total += mu_split(p, j);
            }
            if (std::abs(total - mu[p]) > 1e-9 * std::max(1.0, mu[p])) {
                throw std::invalid_argument("mu_split rows must sum to mu");
            }
        }
    }
}

double exogenous_rate(const VolumeParams& params, const SignalSet& signals, int p, int b) {
    if (!signals.per_opinion()) return params.mu[p] * signals.exogenous(0, b);
    double rate = 0.0;
    for (std::size_t j = 0; j < params.mu_split.extent(1); ++j) {
        rate += params.mu_split(p, j) * signals.exogenous(static_cast<int>(j), b);
    }
    return rate;
}

namespace {

void check_query(const SignalSet& signals, const CountPanel& history, int P, int p, int t) {
    if (p < 0 || p >= P) throw std::out_of_range("platform index out of range");
    if (t < 1 || t > signals.bins()) throw std::out_of_range("time " + std::to_string(t) + " not covered by signals");
    if (history.platforms() != P) throw std::invalid_argument("history platform count does not match parameters");
    if (history.bins() < t - 1) throw std::invalid_argument("history does not cover all bins before t");
}

// sum_{s<t} f(t-s) x_s for one (platform, opinion-set) history column.
double history_conv(const CountPanel& history, int q, int opinion, double theta, int t) {
    double acc = 0.0;
    const double decay = 1.0 - theta;
    for (int s = 1; s < t; ++s) {
        const double n = opinion < 0 ? static_cast<double>(history.platform_total(q, s - 1))
                                     : static_cast<double>(history.at(q, opinion, s - 1));
        acc = decay * acc + theta * n;
    }
    return acc;
}

}  // namespace

double platform_intensity(const VolumeParams& params, const SignalSet& signals, const CountPanel& history, int p,
                          int t) {
    const int P = params.platforms();
    check_query(signals, history, P, p, t);
    double lambda = exogenous_rate(params, signals, p, t - 1);
    for (int q = 0; q < P; ++q) lambda += params.alpha(p, q) * history_conv(history, q, -1, params.theta, t);
    return lambda;
}

double conditional_opinion_intensity(const Matrix& mu_split, const VolumeParams& params, const SignalSet& signals,
                                     const CountPanel& history, int p, int j, int t) {
    const int P = params.platforms();
    check_query(signals, history, P, p, t);
    if (j < 0 || j >= history.opinions()) throw std::out_of_range("opinion index out of range");
    double lambda = mu_split(p, j) * signals.exogenous(j, t - 1);
    for (int q = 0; q < P; ++q) lambda += params.alpha(p, q) * history_conv(history, q, j, params.theta, t);
    return lambda;
}

VolumeTrace compute_volume_trace(const VolumeParams& params, const SignalSet& signals, const CountPanel& counts,
                                 bool with_theta_derivative) {
    const int P = params.platforms();
    const int T = counts.bins();
    if (counts.platforms() != P) throw std::invalid_argument("counts platform count does not match parameters");
    if (signals.bins() < T) throw std::invalid_argument("signals shorter than counts");
    const std::array<std::size_t, 2> shape{static_cast<std::size_t>(P), static_cast<std::size_t>(T)};
    VolumeTrace trace{Matrix(shape), Matrix(shape), with_theta_derivative ? Matrix(shape) : Matrix()};

    const double theta = params.theta;
    const double decay = 1.0 - theta;
    for (int q = 0; q < P; ++q) {
        double c = 0.0;
        double d = 0.0;
        for (int b = 1; b < T; ++b) {
            const double n = static_cast<double>(counts.platform_total(q, b - 1));
            // d/dtheta of c(b) = (1 - theta) c(b-1) + theta n(b-1)
            d = -c + decay * d + n;
            c = decay * c + theta * n;
            trace.conv(q, b) = c;
            if (with_theta_derivative) trace.conv_dtheta(q, b) = d;
        }
    }
    for (int p = 0; p < P; ++p) {
        for (int b = 0; b < T; ++b) {
            double lambda = exogenous_rate(params, signals, p, b);
            for (int q = 0; q < P; ++q) lambda += params.alpha(p, q) * trace.conv(q, b);
            trace.intensity(p, b) = lambda;
        }
    }
    return trace;
}

Array3 conditional_endogenous(const VolumeParams& params, const CountPanel& counts) {
    const int P = params.platforms();
    const int M = counts.opinions();
    const int T = counts.bins();
    Array3 conv({static_cast<std::size_t>(P), static_cast<std::size_t>(M), static_cast<std::size_t>(T)});
    const double theta = params.theta;
    for (int q = 0; q < P; ++q) {
        for (int j = 0; j < M; ++j) {
            double c = 0.0;
            for (int b = 1; b < T; ++b) {
                c = (1.0 - theta) * c + theta * static_cast<double>(counts.at(q, j, b - 1));
                conv(q, j, b) = c;
            }
        }
    }
    Array3 out(conv.shape());
    for (int p = 0; p < P; ++p)
        for (int j = 0; j < M; ++j)
            for (int b = 0; b < T; ++b) {
                double e = 0.0;
                for (int q = 0; q < P; ++q) e += params.alpha(p, q) * conv(q, j, b);
                out(p, j, b) = e;
            }
    return out;
}

Array3 conditional_intensities(const Matrix& mu_split, const VolumeParams& params, const SignalSet& signals,
                               const CountPanel& counts) {
    Array3 out = conditional_endogenous(params, counts);
    for (std::size_t p = 0; p < out.extent(0); ++p)
        for (std::size_t j = 0; j < out.extent(1); ++j)
            for (std::size_t b = 0; b < out.extent(2); ++b)
                out(p, j, b) += mu_split(p, j) * signals.exogenous(static_cast<int>(j), static_cast<int>(b));
    return out;
}

std::int64_t emit_counts(double lambda, Rng& rng) {
    if (!std::isfinite(lambda) || lambda < 0.0) {
        throw std::invalid_argument("Poisson mean must be finite and >= 0, got " + std::to_string(lambda));
    }
    if (lambda == 0.0) return 0;
    std::poisson_distribution<std::int64_t> draw(lambda);
    return draw(rng);
}

double spectral_radius(const Matrix& alpha) {
    const auto P = static_cast<Eigen::Index>(alpha.extent(0));
    Eigen::MatrixXd a(P, P);
    for (Eigen::Index r = 0; r < P; ++r)
        for (Eigen::Index c = 0; c < P; ++c) a(r, c) = alpha(r, c);
    Eigen::EigenSolver<Eigen::MatrixXd> solver(a, false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
}

std::optional<std::string> stability_warning(const VolumeParams& params) {
    const double rho = spectral_radius(params.alpha);
    if (rho >= 1.0) {
        return "spectral radius of alpha is " + std::to_string(rho) + " (>= 1): the volume process is not subcritical";
    }
    return std::nullopt;
}

}  // namespace omm
