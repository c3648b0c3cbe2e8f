#pragma once

#include <functional>
#include <span>
#include <vector>

#include "aplab/autodiff.hpp"

namespace aplab {

/// Central difference (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

/// |autodiff - fd| / (|fd| + 1e-8).
double relative_error(double autodiff, double finite_diff);

/// max_i |a_i - f_i| / (max_i |f_i| + 1e-8): the same ratio with the
/// magnitudes taken over a whole gradient tensor.
double relative_error(std::span<const double> autodiff, std::span<const double> finite_diff);

/// Builds a scalar on `tape` from leaves registered for each input tensor.
using ScalarProgram = std::function<Var(Tape& tape, const std::vector<Var>& inputs)>;

struct GradCheckResult {
    /// Worst tensor-level relative error over all inputs.
    double max_rel_error = 0.0;
    /// Worst coordinate-level relative error (diagnostic; dominated by
    /// difference roundoff where a gradient entry is near zero).
    double max_coord_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t coordinates = 0;
    /// Smallest distance of any relu input from its kink in the unperturbed forward pass.
    double kink_margin = 0.0;
};

/**
 * Differentiates `program` with respect to every tensor in `inputs` by
 * reverse mode and by central differences, and reports the worst
 * relative error.
 */
GradCheckResult gradcheck(const ScalarProgram& program, std::vector<Tensor> inputs, double h = 1e-5);

}  // namespace aplab
