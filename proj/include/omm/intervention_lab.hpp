#pragma once

#include "omm/estimation.hpp"
#include "omm/simulation.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace omm {

/// Raw and transformed share-model inputs over a window, plus the shares.
struct ShareState {
    Array3 lam_raw;    // P×M×T, lambda^q(t|j)
    Matrix xbar_raw;   // K×T
    FeaturePanel features;
    Array3 shares;     // P×M×T
};

[[nodiscard]] ShareState share_state(const Model& model, const SignalSet& signals, const CountPanel& counts);

/// e(s_i^p(t), lambda^q(t|j)) at 0-based bin b; nullopt when lambda^q(t|j) = 0.
[[nodiscard]] std::optional<double> endogenous_elasticity(const Model& model, const ShareState& state, int p, int i,
                                                          int q, int j, int b);

/// e(s_i^p(t), Xbar_k(t)) at 0-based bin b; nullopt when Xbar_k(t) = 0.
[[nodiscard]] std::optional<double> intervention_elasticity(const Model& model, const ShareState& state, int p, int i,
                                                            int k, int b);

using Tensor5 = Tensor<double, 5>;
using Mask4 = Tensor<std::uint8_t, 4>;
using Mask5 = Tensor<std::uint8_t, 5>;

struct ElasticityReport {
    int begin{0};  // 0-based, half-open
    int end{0};
    Tensor5 endogenous;            // (p, q, i, j, t)
    Mask5 endogenous_defined;
    Array4 intervention;           // (p, i, k, t)
    Mask4 intervention_defined;
};

/// Elasticities over [range.begin, range.end) of the counts window.
[[nodiscard]] ElasticityReport elasticity_report(const Model& model, const SignalSet& signals, const CountPanel& counts,
                                                 BinRange range = {}, int threads = 1);

/// Mean over the last (time) axis, skipping undefined cells.
template <std::size_t Rank>
struct TimeAverage {
    Tensor<double, Rank> mean;
    Tensor<double, Rank> coverage;       // fraction of bins defined
    Tensor<std::uint8_t, Rank> defined;  // 0 when no bin was defined
};

template <std::size_t Rank>
[[nodiscard]] TimeAverage<Rank - 1> time_average(const Tensor<double, Rank>& values,
                                                 const Tensor<std::uint8_t, Rank>& defined, int begin, int end) {
    if (values.shape() != defined.shape()) throw std::invalid_argument("time_average: mask shape mismatch");
    const auto W = static_cast<int>(values.extent(Rank - 1));
    if (begin < 0 || end > W || begin >= end) throw std::invalid_argument("time_average: empty or invalid range");
    std::array<std::size_t, Rank - 1> shape{};
    for (std::size_t a = 0; a + 1 < Rank; ++a) shape[a] = values.extent(a);
    TimeAverage<Rank - 1> out{Tensor<double, Rank - 1>(shape), Tensor<double, Rank - 1>(shape),
                              Tensor<std::uint8_t, Rank - 1>(shape)};
    const std::size_t cells = out.mean.size();
    for (std::size_t c = 0; c < cells; ++c) {
        double sum = 0.0;
        int n = 0;
        for (int t = begin; t < end; ++t) {
            const std::size_t at = c * static_cast<std::size_t>(W) + static_cast<std::size_t>(t);
            if (!defined.data()[at]) continue;
            sum += values.data()[at];
            ++n;
        }
        out.mean.data()[c] = n ? sum / n : 0.0;
        out.coverage.data()[c] = static_cast<double>(n) / static_cast<double>(end - begin);
        out.defined.data()[c] = n > 0;
    }
    return out;
}

/// Adds r * mean(X_k*) over `mean_window` to X_k*(t) for bins t > changepoint
/// (1-based). Other series are copied untouched.
[[nodiscard]] std::vector<std::vector<double>> modulate_intervention(const std::vector<std::vector<double>>& x,
                                                                     int k_star, double r, int changepoint,
                                                                     BinRange mean_window);

enum class ShareSource { realized, model };

struct WhatIfScenario {
    int k_star{0};
    double r{0.0};
    int changepoint{1};  // last unmodified bin, 1-based
    int n_sims{50};
    int horizon{0};      // last simulated bin, 1-based; 0 means the signal length
    std::uint64_t seed{0};
    /// Window for the mean of X_k*; default is bins 1..changepoint.
    std::optional<BinRange> mean_window;

    void validate(int interventions, int bins) const;
};

struct WhatIfOptions {
    int threads{1};
    ShareSource share_source{ShareSource::realized};
    std::function<void(int, int)> progress;
};

struct WhatIfResult {
    WhatIfScenario scenario;
    Matrix percent_change;      // P×M, window-mean shares vs the r=0 run
    Matrix baseline_share;      // P×M, window-mean share at r=0
    Matrix modulated_share;     // P×M
    Array3 replicate_change;    // P×M×n_sims
    Matrix replicate_sd;        // P×M
};

/// Paired-seed counterfactual: replicate r of both runs shares one seed.
[[nodiscard]] WhatIfResult whatif_run(const Model& model, const SignalSet& signals, const CountPanel& history,
                                      const WhatIfScenario& scenario, const WhatIfOptions& options = {});

}  // namespace omm
