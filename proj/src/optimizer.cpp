#include "omm/optimizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace omm {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct Correction {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
};

class Box {
public:
    Box(std::span<const double> lower, std::span<const double> upper, std::size_t n)
        : lower_(lower.begin(), lower.end()), upper_(upper.begin(), upper.end()) {
        if (!lower_.empty() && lower_.size() != n) throw std::invalid_argument("lower bound size mismatch");
        if (!upper_.empty() && upper_.size() != n) throw std::invalid_argument("upper bound size mismatch");
    }

    [[nodiscard]] bool active() const { return !lower_.empty() || !upper_.empty(); }

    void project(std::vector<double>& x) const {
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!lower_.empty()) x[i] = std::max(x[i], lower_[i]);
            if (!upper_.empty()) x[i] = std::min(x[i], upper_[i]);
        }
    }

    // Gradient (of the minimized function) with components that point out of
    // the box at an active bound set to zero.
    [[nodiscard]] std::vector<double> free_gradient(const std::vector<double>& x, const std::vector<double>& g) const {
        std::vector<double> out = g;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const bool at_lower = !lower_.empty() && x[i] <= lower_[i] && g[i] > 0.0;
            const bool at_upper = !upper_.empty() && x[i] >= upper_[i] && g[i] < 0.0;
            if (at_lower || at_upper) out[i] = 0.0;
        }
        return out;
    }

private:
    std::vector<double> lower_;
    std::vector<double> upper_;
};

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

OptimizerResult maximize(const Objective& objective, std::vector<double> x0, const OptimizerOptions& options,
                         std::span<const double> lower, std::span<const double> upper) {
    if (options.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    if (!(options.gradient_tolerance > 0.0)) throw std::invalid_argument("gradient_tolerance must be > 0");
    const std::size_t n = x0.size();
    const Box box(lower, upper, n);
    box.project(x0);

    // Internally minimize F = -f.
    auto evaluate = [&](const std::vector<double>& x, std::vector<double>& grad) {
        const double f = objective(x, grad);
        for (double& g : grad) g = -g;
        return -f;
    };

    OptimizerResult result;
    std::vector<double> x = std::move(x0);
    std::vector<double> g(n, 0.0);
    double F = evaluate(x, g);
    if (!std::isfinite(F)) throw std::runtime_error("objective is not finite at the starting point");
    result.trace.push_back(-F);

    std::deque<Correction> memory;
    std::vector<double> x_new(n), g_new(n), d(n);
    std::vector<double> alpha_buf;
    int stalls = 0;

    auto finish = [&](std::string why, bool converged) {
        result.x = x;
        result.value = -F;
        result.gradient_norm = inf_norm(box.free_gradient(x, g));
        result.termination = std::move(why);
        result.converged = converged;
        return result;
    };

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const auto gf = box.free_gradient(x, g);
        const double gnorm = inf_norm(gf);
        if (gnorm < options.gradient_tolerance) return finish("gradient", true);

        // Two-loop recursion on the free gradient.
        d = gf;
        alpha_buf.assign(memory.size(), 0.0);
        for (std::size_t m = memory.size(); m-- > 0;) {
            alpha_buf[m] = memory[m].rho * dot(memory[m].s, d);
            for (std::size_t i = 0; i < n; ++i) d[i] -= alpha_buf[m] * memory[m].y[i];
        }
        double gamma = 1.0;
        if (!memory.empty()) {
            const auto& last = memory.back();
            gamma = dot(last.s, last.y) / dot(last.y, last.y);
        } else {
            gamma = 1.0 / std::max(1.0, gnorm);
        }
        for (double& v : d) v *= gamma;
        for (std::size_t m = 0; m < memory.size(); ++m) {
            const double beta = memory[m].rho * dot(memory[m].y, d);
            for (std::size_t i = 0; i < n; ++i) d[i] += (alpha_buf[m] - beta) * memory[m].s[i];
        }
        for (double& v : d) v = -v;
        const auto pinned = box.free_gradient(x, g);
        for (std::size_t i = 0; i < n; ++i)
            if (pinned[i] == 0.0 && g[i] != 0.0) d[i] = 0.0;

        double slope = dot(g, d);
        if (!(slope < 0.0)) {
            // Not a descent direction: fall back to steepest descent.
            memory.clear();
            for (std::size_t i = 0; i < n; ++i) d[i] = -gf[i] / std::max(1.0, gnorm);
            slope = dot(g, d);
        }

        double step = 1.0;
        bool accepted = false;
        double F_new = F;
        for (int ls = 0; ls < options.max_line_search; ++ls) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * d[i];
            box.project(x_new);
            double predicted = 0.0;
            for (std::size_t i = 0; i < n; ++i) predicted += g[i] * (x_new[i] - x[i]);
            F_new = evaluate(x_new, g_new);
            if (std::isfinite(F_new) && F_new <= F + options.armijo * predicted && F_new <= F) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            const bool small = gnorm < options.gradient_tolerance * std::max(1.0, std::abs(F));
            return finish("stalled", small);
        }

        Correction c{std::vector<double>(n), std::vector<double>(n), 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            c.s[i] = x_new[i] - x[i];
            c.y[i] = g_new[i] - g[i];
        }
        const double sy = dot(c.s, c.y);
        if (sy > 1e-12 * std::sqrt(dot(c.s, c.s) * dot(c.y, c.y))) {
            c.rho = 1.0 / sy;
            memory.push_back(std::move(c));
            if (static_cast<int>(memory.size()) > options.memory) memory.pop_front();
        }

        const double improvement = F - F_new;
        x.swap(x_new);
        g.swap(g_new);
        F = F_new;
        result.iterations = iter + 1;
        result.trace.push_back(-F);

        if (improvement <= 1e-15 * std::max(1.0, std::abs(F))) {
            if (++stalls >= 5) {
                const double gn = inf_norm(box.free_gradient(x, g));
                return finish("stalled", gn < options.gradient_tolerance * std::max(1.0, std::abs(F)));
            }
        } else {
            stalls = 0;
        }
    }
    const double gn = inf_norm(box.free_gradient(x, g));
    return finish("max_iterations", gn < options.gradient_tolerance);
}

std::vector<double> curvature_scale(const Objective& objective, std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<double> g0(n), g1(n), xs(x.begin(), x.end());
    objective(xs, g0);
    std::vector<double> d(n, 1.0);
    for (std::size_t k = 0; k < n; ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(x[k]));
        xs[k] = x[k] + h;
        objective(xs, g1);
        xs[k] = x[k];
        const double c = -(g1[k] - g0[k]) / h;
        if (std::isfinite(c)) d[k] = std::sqrt(std::max(c, 1.0));
    }
    return d;
}

OptimizerResult maximize_scaled(const Objective& objective, std::vector<double> x0, const OptimizerOptions& options,
                                int rounds) {
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
    const std::size_t n = x0.size();
    OptimizerResult total;
    total.x = std::move(x0);
    int budget = options.max_iterations;
    for (int round = 0; round < rounds && budget > 0; ++round) {
        const auto d = curvature_scale(objective, total.x);
        std::vector<double> xs(n);
        const Objective scaled = [&](std::span<const double> y, std::span<double> g) {
            for (std::size_t k = 0; k < n; ++k) xs[k] = y[k] / d[k];
            const double f = objective(xs, g);
            for (std::size_t k = 0; k < n; ++k) g[k] /= d[k];
            return f;
        };
        std::vector<double> y(n);
        for (std::size_t k = 0; k < n; ++k) y[k] = total.x[k] * d[k];
        OptimizerOptions o = options;
        o.max_iterations = budget;
        auto run = maximize(scaled, std::move(y), o);
        for (std::size_t k = 0; k < n; ++k) total.x[k] = run.x[k] / d[k];
        if (total.trace.empty()) total.trace = run.trace;
        else total.trace.insert(total.trace.end(), run.trace.begin() + 1, run.trace.end());
        total.value = run.value;
        total.iterations += run.iterations;
        total.gradient_norm = run.gradient_norm;
        total.termination = run.termination;
        total.converged = run.converged;
        budget -= std::max(run.iterations, 1);
        // A gradient stop after very few steps means the scale was already adequate.
        if (run.converged && run.termination == "gradient" && run.iterations <= 2) break;
    }
    return total;
}

OptimizerResult maximize_newton(const Objective& objective, std::vector<double> x0, const OptimizerOptions& options) {
    if (options.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
    const auto n = static_cast<Eigen::Index>(x0.size());
    using Vec = Eigen::VectorXd;
    Vec x = Eigen::Map<const Vec>(x0.data(), n);
    Vec g(n), g1(n), x_try(n), g_try(n);
    auto eval = [&](const Vec& at, Vec& grad) { return objective({at.data(), static_cast<std::size_t>(at.size())}, {grad.data(), static_cast<std::size_t>(grad.size())}); };

    OptimizerResult result;
    double f = eval(x, g);
    if (!std::isfinite(f)) throw std::runtime_error("objective is not finite at the starting point");
    result.trace.push_back(f);
    Eigen::MatrixXd H(n, n);
    double shift = 0.0;

    auto finish = [&](std::string why, bool converged, double gnorm) {
        result.x.assign(x.data(), x.data() + n);
        result.value = f;
        result.gradient_norm = gnorm;
        result.termination = std::move(why);
        result.converged = converged;
        return result;
    };

    double gnorm = 0.0;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        // Hessian of -f, symmetrized.
        for (Eigen::Index k = 0; k < n; ++k) {
            const double h = 1e-5 * std::max(1.0, std::abs(x[k]));
            Vec xk = x;
            xk[k] += h;
            eval(xk, g1);
            H.col(k) = -(g1 - g) / h;
        }
        H = 0.5 * (H + H.transpose()).eval();
        const Vec diag = H.diagonal().cwiseMax(1.0).cwiseSqrt();
        gnorm = g.cwiseQuotient(diag).cwiseAbs().maxCoeff();
        if (gnorm < options.gradient_tolerance) return finish("gradient", true, gnorm);

        Vec step;
        for (int attempt = 0; attempt < 60; ++attempt) {
            Eigen::MatrixXd A = H;
            A.diagonal() += shift * diag.cwiseAbs2();
            Eigen::LLT<Eigen::MatrixXd> llt(A);
            if (llt.info() == Eigen::Success) {
                step = llt.solve(g);
                if (step.allFinite()) break;
            }
            shift = shift == 0.0 ? 1e-6 : shift * 10.0;
            step.resize(0);
        }
        if (step.size() == 0) return finish("singular", false, gnorm);

        bool accepted = false;
        double t = 1.0;
        const double predicted = g.dot(step);
        for (int ls = 0; ls < options.max_line_search; ++ls) {
            x_try = x + t * step;
            const double f_try = eval(x_try, g_try);
            if (std::isfinite(f_try) && f_try >= f + options.armijo * t * predicted) {
                const double gain = f_try - f;
                x = x_try;
                g = g_try;
                f = f_try;
                accepted = true;
                if (t == 1.0) shift *= 0.1;
                if (shift < 1e-12) shift = 0.0;
                result.iterations = iter + 1;
                result.trace.push_back(f);
                if (gain <= 1e-15 * std::max(1.0, std::abs(f))) return finish("stalled", gnorm < options.gradient_tolerance * std::max(1.0, std::abs(f)), gnorm);
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            if (shift > 1e12) return finish("stalled", gnorm < options.gradient_tolerance * std::max(1.0, std::abs(f)), gnorm);
            shift = shift == 0.0 ? 1e-3 : shift * 100.0;
        }
    }
    return finish("max_iterations", false, gnorm);
}

}  // namespace omm
