#pragma once

#include "omm/volume_model.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace omm {

/// How tier-2 features enter the tendencies. `standardized` applies
/// log1p to lambda^q(t|j) and z-scores both feature families; `raw` uses the
/// quantities as they are (mean 0, sd 1, no log).
enum class FeatureMode { standardized, raw };

[[nodiscard]] std::string to_string(FeatureMode mode);
[[nodiscard]] FeatureMode feature_mode_from_string(const std::string& name);

/// Per-feature affine statistics, frozen once estimated on a training window.
struct FeatureScaling {
    bool log_scale{false};
    Matrix lam_mean;  // P×M
    Matrix lam_sd;    // P×M
    std::vector<double> xbar_mean;
    std::vector<double> xbar_sd;
    std::vector<std::string> warnings;

    [[nodiscard]] static FeatureScaling identity(int platforms, int opinions, int interventions);

    [[nodiscard]] double lam(int q, int j, double v) const {
        return ((log_scale ? std::log1p(v) : v) - lam_mean(q, j)) / lam_sd(q, j);
    }
    /// d lam(q, j, v) / dv
    [[nodiscard]] double lam_slope(int q, int j, double v) const {
        return (log_scale ? 1.0 / (1.0 + v) : 1.0) / lam_sd(q, j);
    }
    [[nodiscard]] double xbar(int k, double v) const { return (v - xbar_mean[k]) / xbar_sd[k]; }
    [[nodiscard]] double xbar_slope(int k) const { return 1.0 / xbar_sd[k]; }

    bool operator==(const FeatureScaling&) const = default;
};

/// Tier-2 parameters. gamma is P×M×K (gamma(p, i, k)); beta is P×P×M×M
/// (beta(p, q, i, j): effect of opinion j on platform q on opinion i on p).
struct ShareParams {
    Matrix mu_split;
    Array3 gamma;
    Array4 beta;

    [[nodiscard]] static ShareParams zeros(int platforms, int opinions, int interventions);
    void validate(const std::vector<double>& mu) const;
    bool operator==(const ShareParams&) const = default;
};

/// Fitted two-tier model together with the feature statistics it was fitted on.
struct Model {
    VolumeParams volume;
    ShareParams share;
    FeatureScaling scaling;

    [[nodiscard]] int platforms() const { return volume.platforms(); }
    [[nodiscard]] int opinions() const { return static_cast<int>(share.mu_split.extent(1)); }
    [[nodiscard]] int interventions() const { return static_cast<int>(share.gamma.extent(2)); }
};

struct FeaturePanel {
    Array3 lam_cond;  // P×M×T, transformed
    Matrix xbar_std;  // K×T, transformed
    FeatureScaling scaling;
};

/// Statistics pooled over one or more training panels. Each entry of
/// `lam_raw` is P×M×T untransformed lambda^q(t|j), each `xbar_raw` K×T.
[[nodiscard]] FeatureScaling fit_feature_scaling(std::span<const Array3> lam_raw, std::span<const Matrix> xbar_raw,
                                                 FeatureMode mode);

/// Raw smoothed interventions as a K×T matrix for the first T bins.
[[nodiscard]] Matrix smoothed_interventions(const SignalSet& signals, double theta, int bins);

/// Transforms raw features with the given (frozen) statistics.
[[nodiscard]] FeaturePanel apply_scaling(const Array3& lam_raw, const Matrix& xbar_raw, const FeatureScaling& scaling);

/// Computes lambda^q(t|j) and Xbar over the history and standardizes them on
/// that same window.
[[nodiscard]] FeaturePanel build_features(const Matrix& mu_split, const VolumeParams& volume,
                                          const SignalSet& signals, const CountPanel& history,
                                          FeatureMode mode = FeatureMode::standardized);

/// Same features, but with statistics frozen from training.
[[nodiscard]] FeaturePanel build_features(const Matrix& mu_split, const VolumeParams& volume,
                                          const SignalSet& signals, const CountPanel& history,
                                          const FeatureScaling& scaling);

/// T_i^p(t) for 1-based t.
[[nodiscard]] double tendency(const ShareParams& params, const FeaturePanel& features, int p, int i, int t);

/// All M tendencies for (p, b) with b 0-based, written into `out`.
void tendencies_at(const ShareParams& params, const Array3& lam_cond, const Matrix& xbar_std, int p, int b,
                   std::span<double> out);

/// Normalized exponential with max subtraction.
[[nodiscard]] std::vector<double> shares_from_tendencies(std::span<const double> tendencies);
void shares_from_tendencies(std::span<const double> tendencies, std::span<double> out);

/// Shares s(p, i, b) on the simplex for every platform and bin.
[[nodiscard]] Array3 compute_shares(const ShareParams& params, const FeaturePanel& features);

/// lambda^p_i(t) = lambda^p(t) s^p_i(t), with features from `history`.
[[nodiscard]] double opinion_intensity(const Model& model, const SignalSet& signals, const CountPanel& history, int p,
                                       int i, int t);

}  // namespace omm
