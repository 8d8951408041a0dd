#include "test_support.hpp"

#include <doctest.h>

using namespace omm;
using namespace omm::testing;

namespace {

VolumeParams two_platform(double mu0, double mu1, double a01 = 0.0) {
    VolumeParams v;
    v.mu = {mu0, mu1};
    v.alpha = Matrix({2, 2});
    v.alpha(0, 1) = a01;
    v.theta = 0.5;
    return v;
}

}  // namespace

TEST_CASE("platform intensity hand values") {
    const SignalSet ones({std::vector<double>(10, 1.0)}, false, {});
    SUBCASE("pure exogenous") {
        auto v = two_platform(15.0, 25.0);
        CountPanel h(2, 2, 10);
        h.set(0, 0, 3, 4);
        for (int t = 1; t <= 10; ++t) CHECK(platform_intensity(v, ones, h, 0, t) == 15.0);
    }
    SUBCASE("first bin ignores history") {
        auto v = two_platform(3.0, 4.0, 0.7);
        Rng rng(1);
        const auto h = random_counts(rng, 2, 2, 10);
        CHECK(platform_intensity(v, ones, h, 0, 1) == 3.0);
    }
    SUBCASE("single past event") {
        auto v = two_platform(3.0, 4.0, 0.6);
        CountPanel h(2, 1, 10);
        h.set(1, 0, 4, 1);  // t = 5 on platform 2
        CHECK(platform_intensity(v, ones, h, 0, 6) == doctest::Approx(3.0 + 0.6 * 0.5));
    }
}

TEST_CASE("intensities match the naive double loop") {
    Rng rng(11);
    for (bool per_opinion : {false, true}) {
        for (int rep = 0; rep < 5; ++rep) {
            const auto sig = random_signals(rng, 2, 1, 20, per_opinion);
            const auto n = random_counts(rng, 2, 2, 20);
            const auto v = random_volume(rng, 2, 2, per_opinion);
            const auto trace = compute_volume_trace(v, sig, n);
            Matrix split = per_opinion ? v.mu_split : random_share(rng, v, 2, 1).mu_split;
            const auto cond = conditional_intensities(split, v, sig, n);
            for (int p = 0; p < 2; ++p)
                for (int t = 1; t <= 20; ++t) {
                    const double naive = naive_platform_intensity(v, sig, n, p, t);
                    CHECK(std::abs(platform_intensity(v, sig, n, p, t) - naive) <= 1e-10);
                    CHECK(std::abs(trace.intensity(p, t - 1) - naive) <= 1e-10);
                    for (int j = 0; j < 2; ++j) {
                        const double c = naive_conditional(split, v, sig, n, p, j, t);
                        CHECK(std::abs(conditional_opinion_intensity(split, v, sig, n, p, j, t) - c) <= 1e-10);
                        CHECK(std::abs(cond(p, j, t - 1) - c) <= 1e-10);
                    }
                }
        }
    }
}

TEST_CASE("conditional intensities add up to the platform intensity") {
    Rng rng(23);
    const auto sig = random_signals(rng, 3, 0, 40);
    const auto n = random_counts(rng, 2, 3, 40);
    const auto v = random_volume(rng, 2, 3);
    const auto split = random_share(rng, v, 3, 0).mu_split;
    for (int p = 0; p < 2; ++p)
        for (int t = 1; t <= 40; ++t) {
            double sum = 0.0;
            for (int j = 0; j < 3; ++j) sum += conditional_opinion_intensity(split, v, sig, n, p, j, t);
            CHECK(std::abs(sum - platform_intensity(v, sig, n, p, t)) <= 1e-9);
        }
}

TEST_CASE("history concentrated on one opinion leaves the others exogenous") {
    const SignalSet ones({std::vector<double>(8, 1.0)}, false, {});
    auto v = two_platform(20.0, 25.0, 0.3);
    v.alpha(0, 0) = 0.4;
    Matrix split({2, 2});
    split(0, 0) = 15;
    split(0, 1) = 5;
    split(1, 0) = 5;
    split(1, 1) = 20;
    CountPanel h(2, 2, 8);
    for (int b = 0; b < 8; ++b) h.set(0, 0, b, 3), h.set(1, 0, b, 2);
    for (int t = 1; t <= 8; ++t) {
        CHECK(conditional_opinion_intensity(split, v, ones, h, 0, 1, t) == 5.0);
        CHECK(conditional_opinion_intensity(split, v, ones, h, 1, 1, t) == 20.0);
    }
}

TEST_CASE("intensity floor and monotonicity") {
    Rng rng(31);
    const auto sig = random_signals(rng, 2, 0, 30);
    const auto v = random_volume(rng, 2, 2);
    auto n = random_counts(rng, 2, 2, 30);
    std::vector<double> before;
    for (int t = 1; t <= 30; ++t) {
        const double lam = platform_intensity(v, sig, n, 0, t);
        CHECK(lam >= v.mu[0] * sig.exogenous(0, t - 1));
        before.push_back(lam);
    }
    n.set(1, 1, 10, n.at(1, 1, 10) + 5);
    for (int t = 1; t <= 30; ++t) CHECK(platform_intensity(v, sig, n, 0, t) >= before[t - 1]);
}

TEST_CASE("poisson emission moments") {
    Rng rng(2024);
    for (int i = 0; i < 100; ++i) CHECK(emit_counts(0.0, rng) == 0);
    const int N = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < N; ++i) {
        const auto k = static_cast<double>(emit_counts(20.0, rng));
        sum += k;
        sq += k * k;
    }
    const double mean = sum / N;
    const double var = (sq - N * mean * mean) / (N - 1);
    CHECK(std::abs(mean - 20.0) <= 3.0 * std::sqrt(20.0 / N));
    CHECK(std::abs(var - 20.0) <= 0.05 * 20.0);
    CHECK_THROWS_AS((void)emit_counts(-1.0, rng), std::invalid_argument);
    CHECK_THROWS_AS((void)emit_counts(std::nan(""), rng), std::invalid_argument);
}

TEST_CASE("stability diagnostics") {
    auto v = two_platform(1.0, 1.0);
    v.alpha(0, 0) = 0.5;
    v.alpha(1, 1) = 0.4;
    CHECK(spectral_radius(v.alpha) == doctest::Approx(0.5));
    CHECK_FALSE(stability_warning(v).has_value());
    v.alpha(0, 1) = 0.8;
    v.alpha(1, 0) = 0.8;
    CHECK(spectral_radius(v.alpha) > 1.0);
    CHECK(stability_warning(v).has_value());
}

TEST_CASE("volume params validation") {
    auto v = two_platform(1.0, 1.0);
    CHECK_NOTHROW(v.validate());
    v.theta = 0.0;
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
    v.theta = 0.5;
    v.alpha(0, 0) = -0.1;
    CHECK_THROWS_AS(v.validate(), std::invalid_argument);
}
