#include "test_support.hpp"

#include "omm/data_io.hpp"

#include <doctest.h>

using namespace omm;
using namespace omm::testing;

namespace {

// Central differences of f at x, step h per coordinate.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                     double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double x0 = x[k];
        x[k] = x0 + h;
        const double up = f(x);
        x[k] = x0 - h;
        const double down = f(x);
        x[k] = x0;
        g[k] = (up - down) / (2.0 * h);
    }
    return g;
}

bool gradient_close(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    return diff <= 1e-6 || diff <= 1e-4 * std::max(std::abs(analytic), std::abs(numeric));
}

SyntheticConfig small_config(int bins, int samples, std::uint64_t seed) {
    SyntheticConfig c;
    c.bins = bins;
    c.n_samples = samples;
    c.n_groups = 1;
    c.seed = seed;
    return c;
}

FitOptions quick_options(FeatureMode mode = FeatureMode::raw) {
    FitOptions o;
    o.feature_mode = mode;
    o.n_restarts = 2;
    o.seed = 5;
    return o;
}

}  // namespace

TEST_CASE("tier-1 likelihood hand values") {
    SUBCASE("saturated exogenous fit") {
        CountPanel n(1, 2, 6);
        const std::vector<std::int64_t> totals{3, 1, 7, 2, 5, 9};
        std::vector<double> s;
        for (int b = 0; b < 6; ++b) {
            n.set(0, 0, b, totals[b] / 2);
            n.set(0, 1, b, totals[b] - totals[b] / 2);
            s.push_back(static_cast<double>(totals[b]));
        }
        const SignalSet sig({s}, false, {});
        VolumeParams v;
        v.mu = {1.0};
        v.alpha = Matrix({1, 1});
        v.theta = 0.5;
        double expected = 0.0;
        for (auto k : totals) {
            const double x = static_cast<double>(k);
            expected += x * std::log(x) - x - std::lgamma(x + 1.0);
        }
        CHECK(loglik_tier1(v, sig, n) == doctest::Approx(expected).epsilon(1e-12));
    }
    SUBCASE("single empty bin") {
        const SignalSet sig({{1.0}}, false, {});
        VolumeParams v;
        v.mu = {2.0};
        v.alpha = Matrix({1, 1});
        v.theta = 0.5;
        CHECK(loglik_tier1(v, sig, CountPanel(1, 1, 1)) == doctest::Approx(-2.0).epsilon(1e-15));
    }
    SUBCASE("pmf product oracle") {
        Rng rng(100);
        const auto sig = random_signals(rng, 2, 0, 30);
        const auto n = random_counts(rng, 2, 2, 30);
        const auto v = random_volume(rng, 2, 2);
        double expected = 0.0;
        for (int p = 0; p < 2; ++p)
            for (int t = 1; t <= 30; ++t)
                expected += log_poisson_pmf(n.platform_total(p, t - 1), naive_platform_intensity(v, sig, n, p, t));
        CHECK(std::abs(loglik_tier1(v, sig, n) - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
    }
    SUBCASE("range restriction sums the selected bins") {
        Rng rng(101);
        const auto sig = random_signals(rng, 2, 0, 20);
        const auto n = random_counts(rng, 2, 2, 20);
        const auto v = random_volume(rng, 2, 2);
        const double all = loglik_tier1(v, sig, n);
        const double a = loglik_tier1(v, sig, n, {0, 8});
        const double b = loglik_tier1(v, sig, n, {8, 20});
        CHECK(a + b == doctest::Approx(all).epsilon(1e-12));
    }
}

TEST_CASE("tier-1 gradient at zero excitation") {
    const SignalSet sig({{1.0, 2.0, 0.5}}, false, {});
    CountPanel n(1, 1, 3);
    n.set(0, 0, 0, 2);
    n.set(0, 0, 1, 5);
    n.set(0, 0, 2, 0);
    VolumeParams v;
    v.mu = {3.0};
    v.alpha = Matrix({1, 1});
    v.theta = 0.5;
    // sum_t S (n / (mu S) - 1) = (2/3 - 1) + 2 (5/6 - 1) + 0.5 (0 - 1)
    const double expected = (2.0 / 3.0 - 1.0) + 2.0 * (5.0 / 6.0 - 1.0) + 0.5 * (0.0 - 1.0);
    CHECK(grad_tier1(v, sig, n).mu[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("tier-1 analytic gradient matches finite differences") {
    Rng rng(7);
    for (auto transform : {ParameterTransform::log, ParameterTransform::box}) {
        for (bool per_opinion : {false, true}) {
            for (int rep = 0; rep < 4; ++rep) {
                const auto sig = random_signals(rng, 2, 2, 50, per_opinion);
                const std::vector<CountPanel> samples{random_counts(rng, 2, 2, 50), random_counts(rng, 2, 2, 50)};
                const auto v = random_volume(rng, 2, 2, per_opinion);
                const Tier1Objective obj(sig, samples, transform);
                const auto x = obj.pack(v);
                std::vector<double> g(x.size()), scratch(x.size());
                obj(x, g);
                const auto num = numeric_gradient([&](std::span<const double> y) { return obj(y, scratch); }, x);
                for (std::size_t k = 0; k < x.size(); ++k) {
                    INFO("coordinate " << k << " analytic " << g[k] << " numeric " << num[k]);
                    CHECK(gradient_close(g[k], num[k]));
                }
            }
        }
    }
}

TEST_CASE("tier-2 likelihood hand values") {
    SUBCASE("zero coupling gives half the platform intensity per opinion") {
        Rng rng(40);
        const auto sig = random_signals(rng, 2, 2, 20);
        const auto n = random_counts(rng, 2, 2, 20);
        auto m = random_model(rng, sig, n, FeatureMode::standardized);
        m.share.gamma.fill(0.0);
        m.share.beta.fill(0.0);
        double expected = 0.0;
        for (int p = 0; p < 2; ++p)
            for (int t = 1; t <= 20; ++t) {
                const double half = naive_platform_intensity(m.volume, sig, n, p, t) / 2.0;
                for (int i = 0; i < 2; ++i) expected += log_poisson_pmf(n.at(p, i, t - 1), half);
            }
        CHECK(std::abs(loglik_tier2(m, sig, n, 1.0) - expected) <= 1e-10 * std::abs(expected));
    }
    SUBCASE("pmf product oracle") {
        Rng rng(41);
        const int P = 2, M = 3, K = 2, T = 25;
        const auto sig = random_signals(rng, M, K, T);
        const auto n = random_counts(rng, P, M, T);
        const auto m = random_model(rng, sig, n, FeatureMode::standardized);
        double expected = 0.0;
        for (int p = 0; p < P; ++p)
            for (int t = 1; t <= T; ++t) {
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
                for (int i = 0; i < M; ++i) expected += log_poisson_pmf(n.at(p, i, t - 1), lam * std::exp(tend[i]) / norm);
            }
        CHECK(std::abs(loglik_tier2(m, sig, n, 0.0) - expected) <= 1e-10 * std::abs(expected));
    }
    SUBCASE("ridge penalty lowers the objective") {
        Rng rng(42);
        const auto sig = random_signals(rng, 2, 2, 20);
        const auto n = random_counts(rng, 2, 2, 20);
        const auto m = random_model(rng, sig, n, FeatureMode::standardized);
        double previous = loglik_tier2(m, sig, n, 0.0);
        for (double reg : {0.1, 1.0, 10.0}) {
            const double now = loglik_tier2(m, sig, n, reg);
            CHECK(now < previous);
            previous = now;
        }
    }
    SUBCASE("range restriction sums the selected bins") {
        Rng rng(43);
        const auto sig = random_signals(rng, 2, 2, 30);
        const auto n = random_counts(rng, 2, 2, 30);
        const auto m = random_model(rng, sig, n, FeatureMode::standardized);
        const double all = loglik_tier2(m, sig, n, 0.0);
        const double a = loglik_tier2(m, sig, n, 0.0, {0, 11});
        const double b = loglik_tier2(m, sig, n, 0.0, {11, 30});
        CHECK(a + b == doctest::Approx(all).epsilon(1e-12));
    }
}

TEST_CASE("tier-2 gradient hand values") {
    Rng rng(50);
    const int M = 2, K = 2, T = 3;
    const auto sig = random_signals(rng, M, K, T);
    const auto n = random_counts(rng, 2, M, T);
    auto m = random_model(rng, sig, n, FeatureMode::standardized);
    m.share.gamma.fill(0.0);
    m.share.beta.fill(0.0);
    const auto g = grad_tier2(m, sig, n, 1.0);
    const auto f = build_features(m.share.mu_split, m.volume, sig, n, m.scaling);
    // At the uniform point d/dgamma = sum_t xbar (n_i - n_total / M): the
    // platform intensity cancels because the shares sum to one.
    for (int p = 0; p < 2; ++p)
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) {
                double expected = 0.0;
                for (int b = 0; b < T; ++b)
                    expected += f.xbar_std(k, b) * (static_cast<double>(n.at(p, i, b)) -
                                                    static_cast<double>(n.platform_total(p, b)) / M);
                CHECK(g.gamma(p, i, k) == doctest::Approx(expected).epsilon(1e-12));
            }
}

TEST_CASE("ridge gradient is exactly 2 lambda gamma") {
    Rng rng(51);
    const auto sig = random_signals(rng, 2, 2, 20);
    const auto n = random_counts(rng, 2, 2, 20);
    const auto m = random_model(rng, sig, n, FeatureMode::standardized);
    const auto g0 = grad_tier2(m, sig, n, 0.0);
    const auto g1 = grad_tier2(m, sig, n, 2.5);
    for (std::size_t k = 0; k < m.share.gamma.size(); ++k)
        CHECK(g0.gamma.data()[k] - g1.gamma.data()[k] == doctest::Approx(2.0 * 2.5 * m.share.gamma.data()[k]).epsilon(1e-12));
    CHECK(g0.beta == g1.beta);
}

TEST_CASE("tier-2 analytic gradient matches finite differences") {
    Rng rng(13);
    for (auto mode : {FeatureMode::standardized, FeatureMode::raw}) {
        for (int rep = 0; rep < 4; ++rep) {
            const auto sig = random_signals(rng, 2, 2, 50);
            const std::vector<CountPanel> samples{random_counts(rng, 2, 2, 50), random_counts(rng, 2, 2, 50)};
            const auto m = random_model(rng, sig, samples[0], mode, mode == FeatureMode::raw ? 0.05 : 0.4);
            const Tier2Objective obj(sig, samples, m.volume, m.scaling, 0.7, true);
            const auto x = obj.pack(m.share);
            REQUIRE(x.size() == obj.dimension());
            std::vector<double> g(x.size()), scratch(x.size());
            obj(x, g);
            const auto num = numeric_gradient([&](std::span<const double> y) { return obj(y, scratch); }, x);
            for (std::size_t k = 0; k < x.size(); ++k) {
                INFO("coordinate " << k << " analytic " << g[k] << " numeric " << num[k]);
                CHECK(gradient_close(g[k], num[k]));
            }
        }
    }
}

TEST_CASE("raw tier-2 gradient in gamma and beta") {
    Rng rng(14);
    const auto sig = random_signals(rng, 2, 2, 40);
    const auto n = random_counts(rng, 2, 2, 40);
    auto m = random_model(rng, sig, n, FeatureMode::standardized);
    const auto g = grad_tier2(m, sig, n, 0.3);
    auto probe = [&](double& slot) {
        const double x0 = slot, h = 1e-6;
        slot = x0 + h;
        const double up = loglik_tier2(m, sig, n, 0.3);
        slot = x0 - h;
        const double down = loglik_tier2(m, sig, n, 0.3);
        slot = x0;
        return (up - down) / (2.0 * h);
    };
    for (std::size_t k = 0; k < m.share.gamma.size(); ++k)
        CHECK(gradient_close(g.gamma.data()[k], probe(m.share.gamma.data()[k])));
    for (std::size_t k = 0; k < m.share.beta.size(); ++k)
        CHECK(gradient_close(g.beta.data()[k], probe(m.share.beta.data()[k])));
}

TEST_CASE("tier-2 objective packs beta relative to the last opinion") {
    Rng rng(15);
    const auto sig = random_signals(rng, 3, 1, 30);
    const std::vector<CountPanel> samples{random_counts(rng, 2, 3, 30)};
    const auto m = random_model(rng, sig, samples[0], FeatureMode::standardized);
    const Tier2Objective obj(sig, samples, m.volume, m.scaling, 1.0, true);
    const auto x = obj.pack(m.share);
    const auto back = obj.unpack(x);
    std::vector<double> g(x.size());
    CHECK(obj(x, g) == doctest::Approx(loglik_tier2(m, sig, samples, 1.0)).epsilon(1e-12));
    Model shifted = m;
    shifted.share = back;
    CHECK(loglik_tier2(shifted, sig, samples, 1.0) == doctest::Approx(loglik_tier2(m, sig, samples, 1.0)).epsilon(1e-12));
    for (int p = 0; p < 2; ++p)
        for (int j = 0; j < 3; ++j) CHECK(back.mu_split(p, j) == doctest::Approx(m.share.mu_split(p, j)).epsilon(1e-12));
}

TEST_CASE("fit options validation") {
    FitOptions o;
    CHECK_NOTHROW(o.validate());
    o.n_restarts = 0;
    CHECK_THROWS_AS(o.validate(), std::invalid_argument);
    o = FitOptions{};
    o.lambda_reg = -1.0;
    CHECK_THROWS_AS(o.validate(), std::invalid_argument);
    CHECK(parameter_transform_from_string("box") == ParameterTransform::box);
    CHECK_THROWS_AS((void)parameter_transform_from_string("cube"), std::invalid_argument);
}

TEST_CASE("pure exogenous data gives small excitation") {
    auto c = small_config(150, 5, 21);
    c.alpha = Matrix({2, 2});
    const auto data = generate_synthetic(c);
    const auto fit = fit_tier1(data.signals, data.groups[0], quick_options());
    for (double a : fit.params.alpha.data()) CHECK(a <= 0.05);
    CHECK(fit.params.mu[0] == doctest::Approx(20.0).epsilon(0.1));
}

TEST_CASE("fits satisfy constraints, report reproducible likelihoods and are fixed points") {
    const auto data = generate_synthetic(small_config(100, 4, 22));
    auto options = quick_options();
    const auto fit = fit_model(data.signals, data.groups[0], options);
    const auto& m = fit.model;
    for (double v : m.volume.mu) CHECK(v >= 0.0);
    for (double v : m.volume.alpha.data()) CHECK(v >= 0.0);
    CHECK(m.volume.theta > 0.0);
    CHECK(m.volume.theta <= 1.0);
    for (int p = 0; p < 2; ++p) {
        double row = 0.0;
        for (int j = 0; j < 2; ++j) {
            CHECK(m.share.mu_split(p, j) >= 0.0);
            row += m.share.mu_split(p, j);
        }
        CHECK(std::abs(row - m.volume.mu[p]) <= 1e-8);
    }
    CHECK(fit.tier1.converged);
    CHECK(fit.tier2.converged);
    CHECK(std::abs(fit.loglik1 - loglik_tier1(m.volume, data.signals, data.groups[0])) <= 1e-8);
    CHECK(std::abs(fit.loglik2 - loglik_tier2(m, data.signals, data.groups[0], options.lambda_reg)) <= 1e-8);

    options.warm_start = m;
    options.n_restarts = 1;
    const auto again1 = fit_tier1(data.signals, data.groups[0], options);
    CHECK(std::abs(again1.loglik - fit.loglik1) < 1e-6);
    const auto again2 = fit_tier2(data.signals, data.groups[0], m.volume, options);
    CHECK(std::abs(loglik_tier2(Model{m.volume, again2.params, again2.scaling}, data.signals, data.groups[0],
                                options.lambda_reg) -
                   fit.loglik2) < 1e-6);
}

TEST_CASE("box transform fits the same optimum") {
    const auto data = generate_synthetic(small_config(100, 4, 23));
    auto options = quick_options();
    const auto a = fit_tier1(data.signals, data.groups[0], options);
    options.parameter_transform = ParameterTransform::box;
    const auto b = fit_tier1(data.signals, data.groups[0], options);
    CHECK(b.loglik == doctest::Approx(a.loglik).epsilon(1e-8));
}

TEST_CASE("single opinion markets are rejected") {
    Rng rng(60);
    const auto sig = random_signals(rng, 1, 1, 20);
    const std::vector<CountPanel> samples{random_counts(rng, 2, 1, 20)};
    const auto v = random_volume(rng, 2, 1);
    CHECK_THROWS_WITH_AS((void)fit_tier2(sig, samples, v, quick_options()), doctest::Contains("two opinions"),
                         std::invalid_argument);
}

TEST_CASE("duplicated samples keep the maximizer") {
    const auto data = generate_synthetic(small_config(80, 2, 24));
    const auto& single = data.groups[0];
    std::vector<CountPanel> doubled = single;
    doubled.insert(doubled.end(), single.begin(), single.end());
    const auto options = quick_options();
    const auto a = fit_model(data.signals, single, options);
    const auto b = fit_model(data.signals, doubled, options);
    CHECK(b.loglik1 == doctest::Approx(2.0 * a.loglik1).epsilon(1e-8));
    for (std::size_t k = 0; k < a.model.volume.alpha.size(); ++k)
        CHECK(b.model.volume.alpha.data()[k] == doctest::Approx(a.model.volume.alpha.data()[k]).epsilon(1e-4));
    CHECK(b.model.volume.theta == doctest::Approx(a.model.volume.theta).epsilon(1e-4));
    // Tier-2 ridge does not scale with the sample count, so compare likelihoods.
    const double cross = loglik_tier2(b.model, data.signals, single, 0.0);
    const double own = loglik_tier2(a.model, data.signals, single, 0.0);
    CHECK(std::abs(cross - own) <= 1e-3 * std::abs(own));
}

TEST_CASE("joint fit of one group equals a plain fit") {
    const auto data = generate_synthetic(small_config(60, 1, 25));
    const auto options = quick_options();
    const auto plain = fit_model(data.signals, data.groups[0], options);
    const auto joint = joint_fit(data.signals, data.groups, options);
    REQUIRE(joint.fits.size() == 1);
    CHECK(joint.fits[0].loglik1 == plain.loglik1);
    CHECK(joint.fits[0].loglik2 == plain.loglik2);
    CHECK(joint.fits[0].model.share.beta == plain.model.share.beta);
    CHECK(joint.mean.at("alpha") == plain.model.volume.alpha.data());
    CHECK(joint.median.at("theta") == std::vector<double>{plain.model.volume.theta});
}

TEST_CASE("frozen interventions keep gamma at zero") {
    const auto data = generate_synthetic(small_config(60, 2, 26));
    auto options = quick_options();
    options.fit_interventions = false;
    const auto fit = fit_model(data.signals, data.groups[0], options);
    for (double g : fit.model.share.gamma.data()) CHECK(g == 0.0);
}
