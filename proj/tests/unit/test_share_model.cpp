#include "test_support.hpp"

#include <doctest.h>

#include <numbers>

using namespace omm;
using namespace omm::testing;

TEST_CASE("share vectors from tendencies") {
    SUBCASE("equal tendencies give the uniform vector") {
        for (double c : {-50.0, 0.0, 3.3, 700.0}) {
            const std::vector<double> t(5, c);
            for (double s : shares_from_tendencies(t)) CHECK(s == doctest::Approx(0.2).epsilon(1e-15));
        }
    }
    SUBCASE("closed form") {
        const std::vector<double> t{std::log(3.0), std::log(1.0)};
        const auto s = shares_from_tendencies(t);
        CHECK(s[0] == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(s[1] == doctest::Approx(0.25).epsilon(1e-15));
    }
    SUBCASE("no overflow") {
        const std::vector<double> t{1000.0, 0.0};
        const auto s = shares_from_tendencies(t);
        CHECK(std::isfinite(s[0]));
        CHECK(s[0] == doctest::Approx(1.0));
        CHECK(s[1] >= 0.0);
        CHECK(s[1] < 1e-300);
    }
    SUBCASE("large magnitudes stay on the simplex") {
        Rng rng(4);
        for (int rep = 0; rep < 200; ++rep) {
            std::vector<double> t(6);
            for (auto& v : t) v = uniform(rng, -1e6, 1e6);
            const auto s = shares_from_tendencies(t);
            double sum = 0.0;
            for (double v : s) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
    SUBCASE("non-finite input rejected") {
        const std::vector<double> t{0.0, std::numeric_limits<double>::infinity()};
        CHECK_THROWS_AS((void)shares_from_tendencies(t), NumericalError);
        const std::vector<double> n{0.0, std::nan("")};
        CHECK_THROWS_AS((void)shares_from_tendencies(n), NumericalError);
    }
}

TEST_CASE("shift invariance and monotonicity") {
    Rng rng(8);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> t(4);
        for (auto& v : t) v = uniform(rng, -3.0, 3.0);
        const auto base = shares_from_tendencies(t);
        auto shifted = t;
        const double c = uniform(rng, -100.0, 100.0);
        for (auto& v : shifted) v += c;
        const auto s2 = shares_from_tendencies(shifted);
        for (int i = 0; i < 4; ++i) CHECK(std::abs(base[i] - s2[i]) <= 1e-12);
        auto up = t;
        up[1] += 0.3;
        const auto s3 = shares_from_tendencies(up);
        CHECK(s3[1] > base[1]);
        for (int j : {0, 2, 3}) CHECK(s3[j] < base[j]);
    }
}

TEST_CASE("tendency hand values and oracle") {
    SUBCASE("zero coupling") {
        Rng rng(2);
        const auto sig = random_signals(rng, 2, 2, 15);
        const auto n = random_counts(rng, 2, 2, 15);
        const auto v = random_volume(rng, 2, 2);
        const auto share = ShareParams::zeros(2, 2, 2);
        auto split = random_share(rng, v, 2, 2).mu_split;
        const auto f = build_features(split, v, sig, n);
        for (int p = 0; p < 2; ++p)
            for (int i = 0; i < 2; ++i)
                for (int t = 1; t <= 15; ++t) CHECK(tendency(share, f, p, i, t) == 0.0);
    }
    SUBCASE("one intervention term") {
        auto share = ShareParams::zeros(1, 2, 1);
        share.gamma(0, 0, 0) = 2.0;
        FeaturePanel f{Array3({1, 2, 1}), Matrix({1, 1}), FeatureScaling::identity(1, 2, 1)};
        f.xbar_std(0, 0) = 0.5;
        CHECK(tendency(share, f, 0, 0, 1) == doctest::Approx(1.0));
        CHECK(tendency(share, f, 0, 1, 1) == 0.0);
    }
    SUBCASE("triple loop oracle") {
        Rng rng(12);
        const int P = 2, M = 3, K = 2, T = 25;
        const auto sig = random_signals(rng, M, K, T);
        const auto n = random_counts(rng, P, M, T);
        const auto v = random_volume(rng, P, M);
        const auto share = random_share(rng, v, M, K);
        const auto f = build_features(share.mu_split, v, sig, n);
        for (int p = 0; p < P; ++p)
            for (int i = 0; i < M; ++i)
                for (int t = 1; t <= T; ++t) {
                    double oracle = 0.0;
                    for (int k = 0; k < K; ++k) oracle += share.gamma(p, i, k) * f.xbar_std(k, t - 1);
                    for (int q = 0; q < P; ++q)
                        for (int j = 0; j < M; ++j) oracle += share.beta(p, q, i, j) * f.lam_cond(q, j, t - 1);
                    CHECK(std::abs(tendency(share, f, p, i, t) - oracle) <= 1e-12);
                }
    }
}

TEST_CASE("feature standardization") {
    SUBCASE("constant series maps to zero with a warning") {
        const SignalSet sig({std::vector<double>(12, 1.0)}, false, {std::vector<double>(12, 0.0)});
        VolumeParams v;
        v.mu = {4.0};
        v.alpha = Matrix({1, 1});
        v.theta = 0.5;
        Matrix split({1, 2});
        split(0, 0) = 1.0;
        split(0, 1) = 3.0;
        const CountPanel empty(1, 2, 12);
        const auto f = build_features(split, v, sig, empty);
        for (double x : f.lam_cond.data()) CHECK(x == 0.0);
        for (double x : f.xbar_std.data()) CHECK(x == 0.0);
        CHECK(f.scaling.warnings.size() == 3);
        CHECK(f.scaling.lam_sd(0, 0) == 1.0);
    }
    SUBCASE("log1p before z-scoring") {
        auto s = FeatureScaling::identity(1, 1, 0);
        s.log_scale = true;
        CHECK(s.lam(0, 0, std::numbers::e - 1.0) == doctest::Approx(1.0).epsilon(1e-14));
        CHECK(s.lam(0, 0, 0.0) == 0.0);
    }
    SUBCASE("z-scores have mean 0 and sd 1 on the window") {
        Rng rng(44);
        const int P = 2, M = 2, K = 2, T = 60;
        const auto sig = random_signals(rng, M, K, T);
        const auto n = random_counts(rng, P, M, T);
        const auto v = random_volume(rng, P, M);
        const auto split = random_share(rng, v, M, K).mu_split;
        const auto f = build_features(split, v, sig, n);
        auto moments = [](auto get, int len) {
            double m = 0.0, s = 0.0;
            for (int b = 0; b < len; ++b) m += get(b);
            m /= len;
            for (int b = 0; b < len; ++b) s += (get(b) - m) * (get(b) - m);
            return std::pair{m, std::sqrt(s / len)};
        };
        for (int q = 0; q < P; ++q)
            for (int j = 0; j < M; ++j) {
                auto [m, s] = moments([&](int b) { return f.lam_cond(q, j, b); }, T);
                CHECK(std::abs(m) <= 1e-6);
                CHECK(std::abs(s - 1.0) <= 1e-6);
            }
        for (int k = 0; k < K; ++k) {
            auto [m, s] = moments([&](int b) { return f.xbar_std(k, b); }, T);
            CHECK(std::abs(m) <= 1e-6);
            CHECK(std::abs(s - 1.0) <= 1e-6);
        }
    }
    SUBCASE("frozen statistics are reused") {
        Rng rng(45);
        const auto sig = random_signals(rng, 2, 1, 40);
        const auto n = random_counts(rng, 2, 2, 40);
        const auto v = random_volume(rng, 2, 2);
        const auto split = random_share(rng, v, 2, 1).mu_split;
        const auto train = build_features(split, v, sig, n.slice(0, 20));
        const auto later = build_features(split, v, sig, n, train.scaling);
        for (int b = 0; b < 20; ++b) CHECK(later.lam_cond(1, 1, b) == doctest::Approx(train.lam_cond(1, 1, b)));
        CHECK(later.scaling == train.scaling);
    }
    SUBCASE("features are causal") {
        Rng rng(46);
        const auto sig = random_signals(rng, 2, 1, 30);
        auto n = random_counts(rng, 2, 2, 30);
        const auto v = random_volume(rng, 2, 2);
        const auto split = random_share(rng, v, 2, 1).mu_split;
        const auto scaling = build_features(split, v, sig, n).scaling;
        const auto before = build_features(split, v, sig, n, scaling);
        n.set(0, 1, 14, n.at(0, 1, 14) + 20);
        const auto after = build_features(split, v, sig, n, scaling);
        for (int b = 0; b <= 14; ++b)
            for (int q = 0; q < 2; ++q)
                for (int j = 0; j < 2; ++j) CHECK(before.lam_cond(q, j, b) == after.lam_cond(q, j, b));
        CHECK(before.lam_cond(0, 1, 15) != after.lam_cond(0, 1, 15));
    }
}

TEST_CASE("opinion intensities") {
    SUBCASE("uniform shares split the platform evenly") {
        const int M = 12;
        const SignalSet sig({std::vector<double>(5, 1.0)}, false, {});
        Model m;
        m.volume.mu = {12.0};
        m.volume.alpha = Matrix({1, 1});
        m.volume.theta = 0.5;
        m.share = ShareParams::zeros(1, M, 0);
        for (int j = 0; j < M; ++j) m.share.mu_split(0, j) = 1.0;
        m.scaling = FeatureScaling::identity(1, M, 0);
        const CountPanel h(1, M, 5);
        for (int i = 0; i < M; ++i) CHECK(opinion_intensity(m, sig, h, 0, i, 3) == doctest::Approx(1.0).epsilon(1e-14));
    }
    SUBCASE("product of independent factors and the simplex identity") {
        Rng rng(77);
        const int P = 2, M = 3, K = 2, T = 20;
        const auto sig = random_signals(rng, M, K, T);
        const auto n = random_counts(rng, P, M, T);
        const auto m = random_model(rng, sig, n, FeatureMode::standardized);
        for (int t : {1, 2, 10, 20})
            for (int p = 0; p < P; ++p) {
                const double lam = naive_platform_intensity(m.volume, sig, n, p, t);
                std::vector<double> tend(M, 0.0);
                for (int i = 0; i < M; ++i) {
                    for (int k = 0; k < K; ++k)
                        tend[i] += m.share.gamma(p, i, k) *
                                   m.scaling.xbar(k, naive_convolve(sig.interventions()[k], m.volume.theta, t));
                    for (int q = 0; q < P; ++q)
                        for (int j = 0; j < M; ++j)
                            tend[i] += m.share.beta(p, q, i, j) *
                                       m.scaling.lam(q, j, naive_conditional(m.share.mu_split, m.volume, sig, n, q, j, t));
                }
                double norm = 0.0;
                for (double x : tend) norm += std::exp(x);
                double total = 0.0;
                for (int i = 0; i < M; ++i) {
                    const double got = opinion_intensity(m, sig, n, p, i, t);
                    CHECK(std::abs(got - lam * std::exp(tend[i]) / norm) <= 1e-12 * std::max(1.0, lam));
                    total += got;
                }
                CHECK(std::abs(total - lam) <= 1e-9);
            }
    }
}

TEST_CASE("computed shares lie on the simplex") {
    Rng rng(90);
    for (int rep = 0; rep < 10; ++rep) {
        const auto sig = random_signals(rng, 3, 2, 30);
        const auto n = random_counts(rng, 2, 3, 30);
        const auto m = random_model(rng, sig, n, rep % 2 ? FeatureMode::raw : FeatureMode::standardized, 2.0);
        const auto f = build_features(m.share.mu_split, m.volume, sig, n, m.scaling);
        const auto s = compute_shares(m.share, f);
        for (int p = 0; p < 2; ++p)
            for (int b = 0; b < 30; ++b) {
                double sum = 0.0;
                for (int i = 0; i < 3; ++i) sum += s(p, i, b);
                CHECK(std::abs(sum - 1.0) <= 1e-9);
            }
    }
}
