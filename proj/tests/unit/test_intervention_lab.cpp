#include "test_support.hpp"

#include "omm/intervention_lab.hpp"

#include <doctest.h>

using namespace omm;
using namespace omm::testing;

namespace {

struct Instance {
    SignalSet signals;
    CountPanel counts;
    Model model;
};

Instance random_instance(Rng& rng, int M, int K, int T, FeatureMode mode = FeatureMode::standardized) {
    auto sig = random_signals(rng, M, K, T);
    auto counts = random_counts(rng, 2, M, T);
    auto model = random_model(rng, sig, counts, mode);
    return {std::move(sig), std::move(counts), std::move(model)};
}

// Shares at (p, b) recomputed from perturbed raw inputs.
std::vector<double> shares_from_raw(const Model& m, const Array3& lam_raw, const Matrix& xbar_raw, int p, int b) {
    const auto f = apply_scaling(lam_raw, xbar_raw, m.scaling);
    std::vector<double> t(m.opinions());
    tendencies_at(m.share, f.lam_cond, f.xbar_std, p, b, t);
    return shares_from_tendencies(t);
}

bool relative_close(double closed, double numeric, double tol) {
    return std::abs(closed - numeric) <= tol * std::max(std::abs(closed), 1e-8);
}

// Two-opinion, one-intervention model with gamma on opinion `favoured`.
Model lever_model(double g, int favoured) {
    Model m;
    m.volume.mu = {20.0};
    m.volume.alpha = Matrix({1, 1});
    m.volume.alpha(0, 0) = 0.2;
    m.volume.theta = 0.5;
    m.share = ShareParams::zeros(1, 2, 1);
    m.share.mu_split(0, 0) = 10.0;
    m.share.mu_split(0, 1) = 10.0;
    m.share.gamma(0, favoured, 0) = g;
    m.scaling = FeatureScaling::identity(1, 2, 1);
    return m;
}

}  // namespace

TEST_CASE("zero coupling gives zero elasticities") {
    Rng rng(1);
    auto inst = random_instance(rng, 2, 2, 30);
    inst.model.share.beta.fill(0.0);
    auto rep = elasticity_report(inst.model, inst.signals, inst.counts);
    for (double e : rep.endogenous.data()) CHECK(e == 0.0);
    inst.model.share.gamma.fill(0.0);
    rep = elasticity_report(inst.model, inst.signals, inst.counts);
    for (double e : rep.intervention.data()) CHECK(e == 0.0);
}

TEST_CASE("a single opinion has zero elasticity") {
    Rng rng(2);
    const auto sig = random_signals(rng, 1, 1, 20);
    const auto counts = random_counts(rng, 2, 1, 20);
    const auto m = random_model(rng, sig, counts, FeatureMode::standardized);
    const auto st = share_state(m, sig, counts);
    for (int b = 1; b < 20; ++b) {
        CHECK(endogenous_elasticity(m, st, 0, 0, 1, 0, b).value() == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(intervention_elasticity(m, st, 1, 0, 0, b).value() == doctest::Approx(0.0).epsilon(1e-15));
    }
}

TEST_CASE("closed forms match finite differences of the share pipeline") {
    Rng rng(3);
    for (auto mode : {FeatureMode::standardized, FeatureMode::raw}) {
        for (int rep = 0; rep < 3; ++rep) {
            const auto inst = random_instance(rng, 3, 2, 30, mode);
            const auto& m = inst.model;
            const auto st = share_state(m, inst.signals, inst.counts);
            for (int b : {1, 7, 29})
                for (int p = 0; p < 2; ++p)
                    for (int i = 0; i < 3; ++i) {
                        for (int q = 0; q < 2; ++q)
                            for (int j = 0; j < 3; ++j) {
                                const double v = st.lam_raw(q, j, b);
                                const double h = 1e-3 * v;
                                auto up = st.lam_raw, down = st.lam_raw;
                                up(q, j, b) = v + h;
                                down(q, j, b) = v - h;
                                const double ds = shares_from_raw(m, up, st.xbar_raw, p, b)[i] -
                                                  shares_from_raw(m, down, st.xbar_raw, p, b)[i];
                                const double numeric = ds / (2.0 * h) * v / st.shares(p, i, b);
                                const double closed = endogenous_elasticity(m, st, p, i, q, j, b).value();
                                INFO("endogenous " << closed << " vs " << numeric);
                                CHECK(relative_close(closed, numeric, 1e-3));
                            }
                        for (int k = 0; k < 2; ++k) {
                            const double v = st.xbar_raw(k, b);
                            if (std::abs(v) <= 1e-6) continue;
                            const double h = 1e-3 * std::abs(v);
                            auto up = st.xbar_raw, down = st.xbar_raw;
                            up(k, b) = v + h;
                            down(k, b) = v - h;
                            const double ds = shares_from_raw(m, st.lam_raw, up, p, b)[i] -
                                              shares_from_raw(m, st.lam_raw, down, p, b)[i];
                            const double numeric = ds / (2.0 * h) * v / st.shares(p, i, b);
                            const double closed = intervention_elasticity(m, st, p, i, k, b).value();
                            INFO("intervention " << closed << " vs " << numeric);
                            CHECK(relative_close(closed, numeric, 1e-3));
                        }
                    }
        }
    }
}

TEST_CASE("share-weighted elasticities sum to zero") {
    Rng rng(4);
    const auto inst = random_instance(rng, 4, 2, 25);
    const auto& m = inst.model;
    const auto rep = elasticity_report(m, inst.signals, inst.counts);
    const auto st = share_state(m, inst.signals, inst.counts);
    for (int p = 0; p < 2; ++p)
        for (int b = 0; b < 25; ++b) {
            for (int q = 0; q < 2; ++q)
                for (int j = 0; j < 4; ++j) {
                    double sum = 0.0;
                    for (int i = 0; i < 4; ++i) sum += st.shares(p, i, b) * rep.endogenous(p, q, i, j, b);
                    CHECK(std::abs(sum) <= 1e-10);
                }
            for (int k = 0; k < 2; ++k) {
                double sum = 0.0;
                for (int i = 0; i < 4; ++i) sum += st.shares(p, i, b) * rep.intervention(p, i, k, b);
                CHECK(std::abs(sum) <= 1e-10);
            }
        }
}

TEST_CASE("two-opinion intervention elasticity closed form") {
    const double g = 0.7;
    const auto m = lever_model(g, 0);
    std::vector<double> x(10);
    for (int t = 0; t < 10; ++t) x[t] = 1.0 + 0.3 * t;
    const SignalSet sig({std::vector<double>(10, 1.0)}, false, {x});
    Rng rng(5);
    const auto counts = random_counts(rng, 1, 2, 10);
    const auto st = share_state(m, sig, counts);
    for (int b = 1; b < 10; ++b) {
        const double v = st.xbar_raw(0, b);
        const double s1 = st.shares(0, 0, b);
        CHECK(s1 == doctest::Approx(std::exp(g * v) / (std::exp(g * v) + 1.0)).epsilon(1e-14));
        const double e = intervention_elasticity(m, st, 0, 0, 0, b).value();
        CHECK(e == doctest::Approx(v * g * (1.0 - s1)).epsilon(1e-14));
        CHECK(e > 0.0);
        CHECK(intervention_elasticity(m, st, 0, 1, 0, b).value() == doctest::Approx(-v * g * s1).epsilon(1e-14));
    }
}

TEST_CASE("undefined cells are flagged") {
    Rng rng(6);
    const auto inst = random_instance(rng, 2, 1, 12);
    const auto rep = elasticity_report(inst.model, inst.signals, inst.counts);
    // Smoothed interventions are empty at the first bin.
    for (int p = 0; p < 2; ++p)
        for (int i = 0; i < 2; ++i) {
            CHECK(rep.intervention_defined(p, i, 0, 0) == 0);
            CHECK(rep.intervention_defined(p, i, 0, 5) == 1);
        }
    const auto avg = time_average(rep.intervention, rep.intervention_defined, 0, 12);
    CHECK(avg.coverage(0, 0, 0) == doctest::Approx(11.0 / 12.0));
    const auto first = time_average(rep.intervention, rep.intervention_defined, 0, 1);
    CHECK(first.defined(0, 0, 0) == 0);
    CHECK(first.coverage(0, 0, 0) == 0.0);

    const auto sub = elasticity_report(inst.model, inst.signals, inst.counts, {4, 8});
    CHECK(sub.begin == 4);
    CHECK(sub.intervention.extent(3) == 4);
    CHECK(sub.endogenous(1, 0, 1, 1, 2) == rep.endogenous(1, 0, 1, 1, 6));
    CHECK_THROWS_AS((void)elasticity_report(inst.model, inst.signals, inst.counts, {8, 8}), std::invalid_argument);
}

TEST_CASE("time averages skip undefined cells") {
    Matrix v({2, 3});
    Tensor<std::uint8_t, 2> d({2, 3}, 1);
    v(0, 0) = 1.0;
    v(0, 1) = 3.0;
    v(0, 2) = 100.0;
    d(0, 2) = 0;
    for (int t = 0; t < 3; ++t) v(1, t) = -0.4;
    const auto a = time_average(v, d, 0, 3);
    CHECK(a.mean(0) == 2.0);
    CHECK(a.coverage(0) == doctest::Approx(2.0 / 3.0));
    CHECK(a.mean(1) == doctest::Approx(-0.4));
    CHECK(a.coverage(1) == 1.0);
    CHECK_THROWS_AS((void)time_average(v, d, 2, 2), std::invalid_argument);
}

TEST_CASE("modulating an intervention") {
    const std::vector<std::vector<double>> x{std::vector<double>(8, 10.0), {1, 2, 3, 4, 5, 6, 7, 8}};
    CHECK(modulate_intervention(x, 0, 0.0, 4, {0, 4}) == x);
    const auto y = modulate_intervention(x, 0, 0.5, 4, {0, 4});
    for (int t = 1; t <= 8; ++t) CHECK(y[0][t - 1] == (t > 4 ? 15.0 : 10.0));
    CHECK(y[1] == x[1]);
    // mean of bins 1..4 of the second series is 2.5
    const auto z = modulate_intervention(x, 1, -1.0, 6, {0, 4});
    CHECK(z[1][5] == 6.0);
    CHECK(z[1][6] == 4.5);
    CHECK(z[1][7] == 5.5);
    CHECK_THROWS_AS((void)modulate_intervention(x, 2, 0.5, 4, {0, 4}), std::invalid_argument);
    CHECK_THROWS_AS((void)modulate_intervention(x, 0, 0.5, 4, {3, 3}), std::invalid_argument);
}

TEST_CASE("what-if runs") {
    const int T = 60;
    std::vector<double> x(T);
    for (int t = 1; t <= T; ++t) x[t - 1] = 2.0 + std::sin(0.2 * t);
    const SignalSet sig({std::vector<double>(T, 1.0)}, false, {x});
    const auto m = lever_model(0.5, 0);
    const auto history = simulate(SimulationSpec{m, sig, CountPanel(1, 2, 0), 1, T, 1, 4, 1});

    WhatIfScenario sc;
    sc.k_star = 0;
    sc.changepoint = 30;
    sc.n_sims = 20;
    sc.seed = 12;

    SUBCASE("r = 0 gives exact zeros") {
        const auto r = whatif_run(m, sig, history, sc);
        for (double v : r.percent_change.data()) CHECK(v == 0.0);
        for (double v : r.replicate_change.data()) CHECK(v == 0.0);
        CHECK(r.baseline_share == r.modulated_share);
    }
    SUBCASE("percent change grows with r for the favoured opinion") {
        double previous = -std::numeric_limits<double>::infinity();
        for (double r : {-0.5, 0.0, 0.5, 1.0}) {
            sc.r = r;
            const auto res = whatif_run(m, sig, history, sc);
            CHECK(res.percent_change(0, 0) > previous);
            previous = res.percent_change(0, 0);
            if (r > 0) CHECK(res.percent_change(0, 1) < 0.0);
        }
    }
    SUBCASE("deterministic under threads and progress") {
        sc.r = 0.5;
        WhatIfOptions o;
        o.threads = 3;
        int calls = 0;
        o.progress = [&](int, int total) {
            ++calls;
            CHECK(total == 40);
        };
        const auto a = whatif_run(m, sig, history, sc, o);
        const auto b = whatif_run(m, sig, history, sc);
        CHECK(a.percent_change == b.percent_change);
        CHECK(a.replicate_sd == b.replicate_sd);
        CHECK(calls == 40);
    }
    SUBCASE("model share source") {
        sc.r = 1.0;
        WhatIfOptions o;
        o.share_source = ShareSource::model;
        const auto res = whatif_run(m, sig, history, sc, o);
        CHECK(res.percent_change(0, 0) > 0.0);
    }
    SUBCASE("validation") {
        auto bad = sc;
        bad.changepoint = T;
        CHECK_THROWS_AS((void)whatif_run(m, sig, history, bad), std::invalid_argument);
        bad = sc;
        bad.k_star = 1;
        CHECK_THROWS_AS((void)whatif_run(m, sig, history, bad), std::invalid_argument);
        bad = sc;
        bad.n_sims = 0;
        CHECK_THROWS_AS((void)whatif_run(m, sig, history, bad), std::invalid_argument);
        CHECK_THROWS_AS((void)whatif_run(m, sig, history.slice(0, 10), sc), std::invalid_argument);
    }
}

TEST_CASE("self-excitation in shares shows as positive self-elasticity after fitting") {
    Model truth;
    truth.volume.mu = {20.0, 25.0};
    truth.volume.alpha = Matrix({2, 2});
    truth.volume.alpha(0, 0) = truth.volume.alpha(1, 1) = 0.3;
    truth.volume.theta = 0.5;
    truth.share = ShareParams::zeros(2, 2, 0);
    truth.share.mu_split(0, 0) = 12.0;
    truth.share.mu_split(0, 1) = 8.0;
    truth.share.mu_split(1, 0) = 10.0;
    truth.share.mu_split(1, 1) = 15.0;
    for (int p = 0; p < 2; ++p)
        for (int i = 0; i < 2; ++i) truth.share.beta(p, p, i, i) = 0.08;
    truth.scaling = FeatureScaling::identity(2, 2, 0);
    const int T = 150;
    const SignalSet sig({std::vector<double>(T, 1.0)}, false, {});
    std::vector<CountPanel> samples;
    for (std::uint64_t s = 0; s < 3; ++s) samples.push_back(simulate(SimulationSpec{truth, sig, CountPanel(2, 2, 0), 1, T, 1, s, 1}));
    FitOptions o;
    o.n_restarts = 1;
    const auto fit = fit_model(sig, samples, o);
    const auto rep = elasticity_report(fit.model, sig, samples[0]);
    const auto avg = time_average(rep.endogenous, rep.endogenous_defined, 0, T);
    for (int p = 0; p < 2; ++p)
        for (int i = 0; i < 2; ++i) CHECK(avg.mean(p, p, i, i) > 0.0);
}
