#pragma once

#include "omm/share_model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace omm {

/// Per-bin cap on simulated intensities and counts; beyond it the run aborts.
inline constexpr double kCountCap = 1e9;

/// Forward simulation request. `history` holds the observed prefix (bins
/// 1..horizon_start-1); bins horizon_start..horizon_end are sampled.
struct SimulationSpec {
    Model model;
    SignalSet signals;
    CountPanel history;
    int horizon_start{1};
    int horizon_end{1};
    int replicates{1};
    std::uint64_t seed{0};
    int threads{1};

    void validate() const;
};

/// One replicate over bins 1..horizon_end, prefix copied from the history.
struct SimulationPath {
    CountPanel counts;
    /// Model shares s^p_i(t) used for emission; prefix bins hold the shares
    /// implied by the observed history.
    Array3 shares;
    /// lambda^p(t)
    Matrix intensity;
};

[[nodiscard]] SimulationPath simulate_path(const SimulationSpec& spec, int replicate);

/// Replicate 0 of the spec.
[[nodiscard]] CountPanel simulate(const SimulationSpec& spec);

enum class ShareAveraging { realized_mean, shares_of_mean_counts };
enum class ReplicateAggregate { mean, median };

struct Prediction {
    int begin{1};  // first predicted bin (1-based)
    int end{1};    // last predicted bin (inclusive)
    Matrix volumes;  // P×|T_pred|
    Array3 shares;   // P×M×|T_pred|
    std::vector<SimulationPath> replicates;
};

struct PredictOptions {
    ShareAveraging share_averaging{ShareAveraging::realized_mean};
    ReplicateAggregate aggregate{ReplicateAggregate::mean};
    /// Called after each finished replicate with (done, total).
    std::function<void(int, int)> progress;
};

[[nodiscard]] Prediction predict(const SimulationSpec& spec, const PredictOptions& options = {});

/// Realized share vector of a bin: counts over total, or the model share
/// when the bin is empty.
[[nodiscard]] Array3 realized_shares(const SimulationPath& path, int begin, int end);

}  // namespace omm
