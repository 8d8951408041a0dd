#include "omm/core.hpp"

#include <cmath>

namespace omm {

void Dimensions::validate() const {
    if (platforms < 1 || opinions < 1 || bins < 1 || interventions < 0) {
        throw std::invalid_argument("dimensions must satisfy P, M, T >= 1 and K >= 0 (got P=" +
                                    std::to_string(platforms) + " M=" + std::to_string(opinions) +
                                    " K=" + std::to_string(interventions) + " T=" + std::to_string(bins) + ")");
    }
}

namespace {

void check_theta(double theta) {
    if (!(theta > 0.0 && theta <= 1.0)) {
        throw std::invalid_argument("kernel theta must lie in (0, 1], got " + std::to_string(theta));
    }
}

}  // namespace

Kernel::Kernel(double theta) : theta_(theta) { check_theta(theta); }

double Kernel::pmf(int t) const {
    if (t < 1) throw std::invalid_argument("kernel pmf is defined for t >= 1");
    if (theta_ == 1.0) return t == 1 ? 1.0 : 0.0;
    return theta_ * std::pow(1.0 - theta_, t - 1);
}

double kernel_pmf(double theta, int t) { return Kernel(theta).pmf(t); }

double kernel_convolve(std::span<const double> series, double theta, int t, std::optional<int> window) {
    check_theta(theta);
    const int T = static_cast<int>(series.size());
    // t = T + 1 is allowed: it is the one-step-ahead value after the last bin.
    if (t < 1 || t > T + 1) {
        throw std::out_of_range("convolution time " + std::to_string(t) + " outside [1, " + std::to_string(T + 1) + "]");
    }
    if (window && *window < 1) throw std::invalid_argument("convolution window must be >= 1");
    const double decay = 1.0 - theta;
    const double tail = window ? theta * std::pow(decay, *window) : 0.0;
    double acc = 0.0;
    for (int s = 1; s < t; ++s) {
        acc = decay * acc + theta * series[s - 1];
        if (window && s - 1 - *window >= 0) acc -= tail * series[s - 1 - *window];
    }
    return acc;
}

std::vector<double> convolve_series(std::span<const double> series, double theta, std::optional<int> window) {
    check_theta(theta);
    if (window && *window < 1) throw std::invalid_argument("convolution window must be >= 1");
    std::vector<double> out(series.size(), 0.0);
    const double decay = 1.0 - theta;
    const double tail = window ? theta * std::pow(decay, *window) : 0.0;
    double acc = 0.0;
    for (std::size_t b = 1; b < series.size(); ++b) {
        acc = decay * acc + theta * series[b - 1];
        if (window && static_cast<long>(b) - 1 - *window >= 0) {
            acc -= tail * series[b - 1 - *window];
        }
        out[b] = acc;
    }
    return out;
}

std::vector<std::vector<double>> build_smoothed_interventions(const std::vector<std::vector<double>>& interventions,
                                                              double theta) {
    std::vector<std::vector<double>> out;
    out.reserve(interventions.size());
    for (const auto& x : interventions) out.push_back(convolve_series(x, theta));
    return out;
}

SignalSet::SignalSet(std::vector<std::vector<double>> exogenous, bool per_opinion,
                     std::vector<std::vector<double>> interventions)
    : exogenous_(std::move(exogenous)), per_opinion_(per_opinion), interventions_(std::move(interventions)) {
    if (exogenous_.empty()) throw std::invalid_argument("signal set needs at least one exogenous series");
    if (!per_opinion_ && exogenous_.size() != 1) {
        throw std::invalid_argument("shared-signal mode takes exactly one exogenous series");
    }
    bins_ = static_cast<int>(exogenous_.front().size());
    if (bins_ < 1) throw std::invalid_argument("signal series must have at least one bin");
    for (const auto& s : exogenous_) {
        if (static_cast<int>(s.size()) != bins_) throw std::invalid_argument("exogenous series lengths differ");
        for (double v : s) {
            if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("exogenous signal entries must be finite and >= 0");
        }
    }
    for (const auto& x : interventions_) {
        if (static_cast<int>(x.size()) != bins_) throw std::invalid_argument("intervention series length differs from T");
        for (double v : x) {
            if (!std::isfinite(v)) throw std::invalid_argument("intervention entries must be finite");
        }
    }
}

SignalSet SignalSet::slice(int begin, int end) const {
    if (begin < 0 || end > bins_ || begin >= end) throw std::out_of_range("signal slice out of range");
    auto cut = [&](const std::vector<std::vector<double>>& in) {
        std::vector<std::vector<double>> out;
        for (const auto& s : in) out.emplace_back(s.begin() + begin, s.begin() + end);
        return out;
    };
    return SignalSet(cut(exogenous_), per_opinion_, cut(interventions_));
}

SignalSet SignalSet::with_interventions(std::vector<std::vector<double>> interventions) const {
    return SignalSet(exogenous_, per_opinion_, std::move(interventions));
}

CountPanel::CountPanel(int platforms, int opinions, int bins)
    : n_({static_cast<std::size_t>(platforms), static_cast<std::size_t>(opinions), static_cast<std::size_t>(bins)}, 0) {
    if (platforms < 1 || opinions < 1 || bins < 0) throw std::invalid_argument("count panel needs P, M >= 1");
}

void CountPanel::set(int p, int i, int b, std::int64_t value) {
    if (value < 0) throw std::invalid_argument("counts must be nonnegative");
    n_(p, i, b) = value;
}

std::int64_t CountPanel::platform_total(int p, int b) const {
    std::int64_t total = 0;
    for (int i = 0; i < opinions(); ++i) total += n_(p, i, b);
    return total;
}

Matrix CountPanel::platform_totals() const {
    Matrix out({static_cast<std::size_t>(platforms()), static_cast<std::size_t>(bins())});
    for (int p = 0; p < platforms(); ++p)
        for (int b = 0; b < bins(); ++b) out(p, b) = static_cast<double>(platform_total(p, b));
    return out;
}

std::vector<double> CountPanel::series(int p, int i) const {
    std::vector<double> out(bins());
    for (int b = 0; b < bins(); ++b) out[b] = static_cast<double>(n_(p, i, b));
    return out;
}

CountPanel CountPanel::slice(int begin, int end) const {
    if (begin < 0 || end > bins() || begin > end) throw std::out_of_range("count slice out of range");
    CountPanel out(platforms(), opinions(), end - begin);
    for (int p = 0; p < platforms(); ++p)
        for (int i = 0; i < opinions(); ++i)
            for (int b = begin; b < end; ++b) out.n_(p, i, b - begin) = n_(p, i, b);
    return out;
}

CountPanel CountPanel::extended(int bins_total) const {
    if (bins_total < bins()) throw std::invalid_argument("extended panel cannot be shorter");
    CountPanel out(platforms(), opinions(), bins_total);
    for (int p = 0; p < platforms(); ++p)
        for (int i = 0; i < opinions(); ++i)
            for (int b = 0; b < bins(); ++b) out.n_(p, i, b) = n_(p, i, b);
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace omm
