#pragma once

#include "omm/tensor.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace omm {

// Error categories map onto the CLI exit codes (2 data, 3 numerical).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// P platforms, M opinions, K interventions, T bins. Only K may be zero.
struct Dimensions {
    int platforms{1};
    int opinions{1};
    int interventions{0};
    int bins{1};

    void validate() const;
    bool operator==(const Dimensions&) const = default;
};

/// Geometric memory kernel f(t) = theta (1 - theta)^(t - 1), t >= 1.
class Kernel {
public:
    explicit Kernel(double theta);

    [[nodiscard]] double theta() const { return theta_; }
    [[nodiscard]] double pmf(int t) const;

private:
    double theta_;
};

[[nodiscard]] double kernel_pmf(double theta, int t);

/// sum_{s<t} f(t - s) series[s] with 1-based t. An optional window W keeps
/// only the last W bins of history.
[[nodiscard]] double kernel_convolve(std::span<const double> series, double theta, int t,
                                     std::optional<int> window = std::nullopt);

/// All T convolutions at once via the rolling recurrence
/// conv(t + 1) = (1 - theta) conv(t) + theta series[t]. Element b holds t = b + 1.
[[nodiscard]] std::vector<double> convolve_series(std::span<const double> series, double theta,
                                                  std::optional<int> window = std::nullopt);

[[nodiscard]] std::vector<std::vector<double>> build_smoothed_interventions(
    const std::vector<std::vector<double>>& interventions, double theta);

/// Exogenous drive S(t) (shared, or one series per opinion) plus the K raw
/// intervention series. Series are stored 0-based: element b is bin t = b + 1.
class SignalSet {
public:
    SignalSet() = default;
    SignalSet(std::vector<std::vector<double>> exogenous, bool per_opinion,
              std::vector<std::vector<double>> interventions);

    [[nodiscard]] bool per_opinion() const { return per_opinion_; }
    [[nodiscard]] int bins() const { return bins_; }
    [[nodiscard]] int intervention_count() const { return static_cast<int>(interventions_.size()); }

    /// S(t) in shared mode, S_j(t) in per-opinion mode. b is 0-based.
    [[nodiscard]] double exogenous(int opinion, int b) const {
        return per_opinion_ ? exogenous_[opinion][b] : exogenous_[0][b];
    }
    [[nodiscard]] const std::vector<std::vector<double>>& exogenous_series() const { return exogenous_; }
    [[nodiscard]] const std::vector<std::vector<double>>& interventions() const { return interventions_; }

    [[nodiscard]] std::vector<std::vector<double>> smoothed(double theta) const {
        return build_smoothed_interventions(interventions_, theta);
    }

    /// Bins [begin, end) as a new signal set, 0-based.
    [[nodiscard]] SignalSet slice(int begin, int end) const;
    [[nodiscard]] SignalSet with_interventions(std::vector<std::vector<double>> interventions) const;

    bool operator==(const SignalSet&) const = default;

private:
    std::vector<std::vector<double>> exogenous_;
    bool per_opinion_{false};
    std::vector<std::vector<double>> interventions_;
    int bins_{0};
};

/// Nonnegative integer counts n[p][i][b] (b = t - 1).
class CountPanel {
public:
    CountPanel() = default;
    CountPanel(int platforms, int opinions, int bins);

    [[nodiscard]] int platforms() const { return static_cast<int>(n_.extent(0)); }
    [[nodiscard]] int opinions() const { return static_cast<int>(n_.extent(1)); }
    [[nodiscard]] int bins() const { return static_cast<int>(n_.extent(2)); }

    [[nodiscard]] std::int64_t at(int p, int i, int b) const { return n_(p, i, b); }
    void set(int p, int i, int b, std::int64_t value);

    [[nodiscard]] std::int64_t platform_total(int p, int b) const;

    /// Platform totals as doubles, P×T.
    [[nodiscard]] Matrix platform_totals() const;
    /// Opinion series as doubles for one (p, i).
    [[nodiscard]] std::vector<double> series(int p, int i) const;

    [[nodiscard]] CountPanel slice(int begin, int end) const;
    /// Copy with bins extended to `bins`, new bins zero.
    [[nodiscard]] CountPanel extended(int bins) const;

    [[nodiscard]] const Tensor<std::int64_t, 3>& raw() const { return n_; }

    bool operator==(const CountPanel&) const = default;

private:
    Tensor<std::int64_t, 3> n_;
};

/// Deterministic seed derivation for independent streams (splitmix64).
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

using Rng = std::mt19937_64;

}  // namespace omm
