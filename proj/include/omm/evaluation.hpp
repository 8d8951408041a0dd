#pragma once

#include "omm/estimation.hpp"
#include "omm/simulation.hpp"

#include <optional>
#include <span>

namespace omm {

/// Temporal holdout: fit on [obs_begin, obs_end], evaluate on
/// [obs_end + 1, pred_end]. All bounds 1-based and inclusive.
struct HoldoutSplit {
    int obs_begin{1};
    int obs_end{1};
    int pred_end{1};

    [[nodiscard]] int pred_begin() const { return obs_end + 1; }
    [[nodiscard]] int pred_size() const { return pred_end - obs_end; }
    void validate() const;
};

/// Platform-averaged SMAPE in percent. Both matrices are P×|T_pred|; a bin
/// with zero prediction and zero actual contributes 0.
[[nodiscard]] double smape(const Matrix& predicted, const Matrix& actual);

struct KlOptions {
    double epsilon{1e-6};
    /// Use sum s log(s_hat / s) instead of the standard divergence.
    bool flipped{false};
};

/// KL(actual || predicted) after adding epsilon to every entry of both
/// vectors and renormalizing.
[[nodiscard]] double kl_shares(std::span<const double> actual, std::span<const double> predicted,
                               const KlOptions& options = {});

/// KL per (platform, bin) between actual and predicted shares (P×M×W each).
[[nodiscard]] Matrix kl_series(const Array3& actual, const Array3& predicted, const KlOptions& options = {});

struct RmseByType {
    double mu{0.0};
    double alpha{0.0};
    double theta{0.0};
    double gamma{0.0};
    double beta{0.0};
};

/// Per type: sqrt(mean squared componentwise error) for each estimate set,
/// then averaged over the sets. `mu` compares the P×M split.
[[nodiscard]] RmseByType rmse_by_type(std::span<const Model> estimates, const Model& truth);

struct HoldoutOptions {
    FitOptions fit;
    int replicates{5};
    std::uint64_t seed{0};
    PredictOptions predict;
    KlOptions kl;
    /// Evaluate this model instead of fitting one.
    std::optional<Model> model;
};

struct HoldoutReport {
    HoldoutSplit split;
    std::optional<FitResult> fit;
    Model model;
    Prediction prediction;
    Matrix actual_volumes;   // P×|T_pred|
    Array3 actual_shares;    // P×M×|T_pred|
    double smape{0.0};
    double baseline_smape{0.0};  // constant training-mean predictor
    Matrix kl;                   // P×|T_pred|
    double tier1_holdout_loglik{0.0};
    double tier2_holdout_loglik{0.0};
};

/// Fits on T_obs (unless a model is supplied), predicts T_pred with R
/// replicates and scores volumes (SMAPE) and shares (KL).
[[nodiscard]] HoldoutReport run_holdout(const SignalSet& signals, const CountPanel& counts, const HoldoutSplit& split,
                                        const HoldoutOptions& options);

/// Observed shares n^p_{i,t} / n^p_t over [begin, end) (0-based); empty bins
/// get the uniform vector.
[[nodiscard]] Array3 observed_shares(const CountPanel& counts, int begin, int end);

}  // namespace omm
