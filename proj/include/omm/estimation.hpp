#pragma once

#include "omm/optimizer.hpp"
#include "omm/share_model.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace omm {

/// Lower floor applied to intensities inside the log-likelihoods only.
inline constexpr double kIntensityFloor = 1e-10;

enum class ParameterTransform { log, box };

[[nodiscard]] std::string to_string(ParameterTransform transform);
[[nodiscard]] ParameterTransform parameter_transform_from_string(const std::string& name);

struct FitOptions {
    int max_iterations{500};
    double gradient_tolerance{1e-5};
    ParameterTransform parameter_transform{ParameterTransform::log};
    double lambda_reg{1.0};
    int n_restarts{3};
    std::uint64_t seed{0};
    FeatureMode feature_mode{FeatureMode::standardized};
    /// false freezes gamma at zero (the no-interventions ablation).
    bool fit_interventions{true};
    int threads{1};
    /// Starting point for the first restart; later restarts jitter around it.
    std::optional<Model> warm_start;

    void validate() const;
};

struct FitDiagnostics {
    bool converged{false};
    int iterations{0};
    double gradient_norm{0.0};
    std::string termination;
    std::vector<double> restart_logliks;
    int best_restart{0};
    std::vector<std::string> warnings;
};

struct Tier1Fit {
    VolumeParams params;
    double loglik{0.0};
    FitDiagnostics diagnostics;
};

struct Tier2Fit {
    ShareParams params;
    FeatureScaling scaling;
    double loglik{0.0};
    FitDiagnostics diagnostics;
};

struct FitResult {
    Model model;
    double loglik1{0.0};
    double loglik2{0.0};
    bool converged{false};
    int iterations{0};
    double gradient_norm{0.0};
    FitDiagnostics tier1;
    FitDiagnostics tier2;
};

/// Half-open 0-based bin range used to restrict likelihood sums.
struct BinRange {
    int begin{0};
    int end{-1};  // -1: through the last bin

    [[nodiscard]] int resolved_end(int bins) const { return end < 0 ? bins : end; }
};

// --- tier 1 ---------------------------------------------------------------

[[nodiscard]] double loglik_tier1(const VolumeParams& params, const SignalSet& signals, const CountPanel& counts,
                                  BinRange range = {});
[[nodiscard]] double loglik_tier1(const VolumeParams& params, const SignalSet& signals,
                                  std::span<const CountPanel> samples);

struct Tier1Gradient {
    std::vector<double> mu;
    Matrix alpha;
    double theta{0.0};
    Matrix mu_split;  // per-opinion signal mode only
};

[[nodiscard]] Tier1Gradient grad_tier1(const VolumeParams& params, const SignalSet& signals, const CountPanel& counts);

[[nodiscard]] Tier1Fit fit_tier1(const SignalSet& signals, std::span<const CountPanel> samples,
                                 const FitOptions& options);

// --- tier 2 ---------------------------------------------------------------

/// Opinion-level log-likelihood minus lambda_reg * ||gamma||^2. Uses the
/// model's frozen feature statistics.
[[nodiscard]] double loglik_tier2(const Model& model, const SignalSet& signals, const CountPanel& counts,
                                  double lambda_reg, BinRange range = {});
[[nodiscard]] double loglik_tier2(const Model& model, const SignalSet& signals, std::span<const CountPanel> samples,
                                  double lambda_reg);

/// Gradient with mu_split treated as free coordinates (no sum constraint).
struct Tier2Gradient {
    Matrix mu_split;
    Array3 gamma;
    Array4 beta;
};

[[nodiscard]] Tier2Gradient grad_tier2(const Model& model, const SignalSet& signals, const CountPanel& counts,
                                       double lambda_reg);

[[nodiscard]] Tier2Fit fit_tier2(const SignalSet& signals, std::span<const CountPanel> samples,
                                 const VolumeParams& volume_hat, const FitOptions& options);

// --- transformed-scale objectives (what the optimizer sees) --------------

/// Packs/unpacks parameters onto the optimizer's coordinates and evaluates
/// the likelihood and its gradient there. Exposed for gradient checking.
class Tier1Objective {
public:
    Tier1Objective(const SignalSet& signals, std::span<const CountPanel> samples, ParameterTransform transform);

    [[nodiscard]] std::vector<double> pack(const VolumeParams& params) const;
    [[nodiscard]] VolumeParams unpack(std::span<const double> x) const;
    double operator()(std::span<const double> x, std::span<double> grad) const;

    [[nodiscard]] std::vector<double> lower_bounds() const;
    [[nodiscard]] std::vector<double> upper_bounds() const;

private:
    const SignalSet& signals_;
    std::span<const CountPanel> samples_;
    ParameterTransform transform_;
    int platforms_;
    int opinions_;
    bool per_opinion_;
};

/// Tier-2 objective on packed coordinates: split scores (last score fixed at
/// 0), then gamma when fitted, then beta for i < M-1. Shares only depend on
/// beta differences across i, so beta is packed relative to the last opinion.
class Tier2Objective {
public:
    Tier2Objective(const SignalSet& signals, std::span<const CountPanel> samples, const VolumeParams& volume_hat,
                   FeatureScaling scaling, double lambda_reg, bool fit_interventions);
    ~Tier2Objective();
    Tier2Objective(const Tier2Objective&) = delete;
    Tier2Objective& operator=(const Tier2Objective&) = delete;

    [[nodiscard]] std::vector<double> pack(const ShareParams& params) const;
    [[nodiscard]] ShareParams unpack(std::span<const double> x) const;
    double operator()(std::span<const double> x, std::span<double> grad) const;

    [[nodiscard]] std::size_t dimension() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// --- joint fitting --------------------------------------------------------

/// Tier 1 then tier 2 on one group of samples sharing parameters.
[[nodiscard]] FitResult fit_model(const SignalSet& signals, std::span<const CountPanel> samples,
                                  const FitOptions& options);

struct JointFitSummary {
    std::vector<FitResult> fits;
    /// Per parameter type (mu_split, alpha, theta, gamma, beta): componentwise
    /// mean and median across groups, flattened row-major.
    std::map<std::string, std::vector<double>> mean;
    std::map<std::string, std::vector<double>> median;
};

[[nodiscard]] JointFitSummary joint_fit(const SignalSet& signals, const std::vector<std::vector<CountPanel>>& groups,
                                        const FitOptions& options);

/// Flattened parameter components keyed by type name.
[[nodiscard]] std::map<std::string, std::vector<double>> parameter_components(const Model& model);

}  // namespace omm
