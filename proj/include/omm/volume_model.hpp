#pragma once

#include "omm/core.hpp"

#include <optional>
#include <string>

namespace omm {

/// Tier-1 parameters: baseline scalings mu^p, excitation alpha^{pq} and the
/// shared kernel memory theta. In per-opinion signal mode the baseline is the
/// P×M matrix mu_split and mu[p] is its row sum.
struct VolumeParams {
    std::vector<double> mu;
    Matrix alpha;
    double theta{0.5};
    Matrix mu_split;

    [[nodiscard]] int platforms() const { return static_cast<int>(mu.size()); }
    void validate(bool per_opinion = false) const;
    bool operator==(const VolumeParams&) const = default;
};

/// mu^p S(t), or sum_j mu_j^p S_j(t) in per-opinion mode. b is 0-based.
[[nodiscard]] double exogenous_rate(const VolumeParams& params, const SignalSet& signals, int p, int b);

/// lambda^p(t) for 1-based t; only history bins before t are read.
[[nodiscard]] double platform_intensity(const VolumeParams& params, const SignalSet& signals,
                                        const CountPanel& history, int p, int t);

/// lambda^p(t|j): intensity of opinion j in isolation, driven by mu_split.
[[nodiscard]] double conditional_opinion_intensity(const Matrix& mu_split, const VolumeParams& params,
                                                   const SignalSet& signals, const CountPanel& history, int p,
                                                   int j, int t);

/// Whole-panel intensities. `conv(q, b)` is sum_{s<t} f(t-s) n^q_s and
/// `conv_dtheta` its derivative in theta (filled only when requested).
struct VolumeTrace {
    Matrix intensity;
    Matrix conv;
    Matrix conv_dtheta;
};

[[nodiscard]] VolumeTrace compute_volume_trace(const VolumeParams& params, const SignalSet& signals,
                                               const CountPanel& counts, bool with_theta_derivative = false);

/// Endogenous part of lambda^q(t|j), P×M×T: sum_r alpha^{qr} sum_{s<t} f(t-s) n^r_{j,s}.
[[nodiscard]] Array3 conditional_endogenous(const VolumeParams& params, const CountPanel& counts);

/// Full lambda^q(t|j), P×M×T.
[[nodiscard]] Array3 conditional_intensities(const Matrix& mu_split, const VolumeParams& params,
                                             const SignalSet& signals, const CountPanel& counts);

/// Poisson draw with mean lambda.
[[nodiscard]] std::int64_t emit_counts(double lambda, Rng& rng);

[[nodiscard]] double spectral_radius(const Matrix& alpha);

/// Returns a warning message when alpha is at or beyond the critical regime.
[[nodiscard]] std::optional<std::string> stability_warning(const VolumeParams& params);

}  // namespace omm
