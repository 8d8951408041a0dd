#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace omm {

struct OptimizerOptions {
    int max_iterations{500};
    double gradient_tolerance{1e-5};
    int memory{10};
    double armijo{1e-4};
    int max_line_search{50};
};

struct OptimizerResult {
    std::vector<double> x;
    double value{0.0};
    int iterations{0};
    bool converged{false};
    double gradient_norm{0.0};
    std::string termination;
    /// Objective after every accepted iteration (starting value first).
    std::vector<double> trace;
};

/// Returns the objective at x and writes its gradient into grad.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// L-BFGS ascent with a backtracking Armijo line search, so accepted
/// iterates never decrease the objective. When bounds are given the step is
/// projected onto the box and coordinates pinned at an active bound are
/// frozen for the direction computation.
///
/// Terminates when the (projected) gradient infinity-norm drops below
/// gradient_tolerance, or when no further ascent is possible in floating
/// point; the latter counts as converged only if the gradient is below
/// gradient_tolerance * max(1, |f|).
[[nodiscard]] OptimizerResult maximize(const Objective& objective, std::vector<double> x0,
                                       const OptimizerOptions& options, std::span<const double> lower = {},
                                       std::span<const double> upper = {});

/// Runs maximize on rescaled coordinates y = d * x, where d_k is the square
/// root of the negative diagonal Hessian (floored at 1) estimated by forward
/// differences of the gradient. The scale is re-estimated at each round's end
/// point, up to `rounds` times, sharing one iteration budget. Convergence is
/// judged on the rescaled gradient, i.e. roughly in units of standard errors
/// when the objective is a log-likelihood.
[[nodiscard]] OptimizerResult maximize_scaled(const Objective& objective, std::vector<double> x0,
                                              const OptimizerOptions& options, int rounds = 3);

/// Damped Newton ascent for small problems. The Hessian comes from forward
/// differences of the gradient; when it is not negative definite a
/// Levenberg shift is added. Convergence uses the same rescaled gradient
/// criterion as maximize_scaled.
[[nodiscard]] OptimizerResult maximize_newton(const Objective& objective, std::vector<double> x0,
                                              const OptimizerOptions& options);

/// Diagonal scale used by maximize_scaled at x.
[[nodiscard]] std::vector<double> curvature_scale(const Objective& objective, std::span<const double> x);

}  // namespace omm
