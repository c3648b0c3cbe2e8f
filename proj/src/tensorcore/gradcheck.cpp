#include "aplab/gradcheck.hpp"

#include <cmath>

namespace aplab {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
    Tensor probe(x.shape, x.data);
    Tensor g(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + h;
        const double up = f(probe);
        probe.data[i] = orig - h;
        const double down = f(probe);
        probe.data[i] = orig;
        g.data[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double relative_error(double autodiff, double finite_diff) {
    return std::abs(autodiff - finite_diff) / (std::abs(finite_diff) + 1e-8);
}

double relative_error(std::span<const double> autodiff, std::span<const double> finite_diff) {
    double scale = 0.0;
    for (double v : finite_diff) scale = std::max(scale, std::abs(v));
    return max_abs_diff(autodiff, finite_diff) / (scale + 1e-8);
}

GradCheckResult gradcheck(const ScalarProgram& program, std::vector<Tensor> inputs, double h) {
    GradCheckResult result;
    for (auto& t : inputs) {
        t.requires_grad = true;
        t.grad.reset();
    }
    {
        Tape tape;
        std::vector<Var> leaves;
        for (auto& t : inputs) leaves.push_back(tape.leaf(t));
        Var out = program(tape, leaves);
        result.kink_margin = tape.kink_margin();
        tape.backward(out);
    }

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto eval = [&](const Tensor& probe) {
            Tape tape;
            std::vector<Tensor> copies;
            copies.reserve(inputs.size());
            for (std::size_t j = 0; j < inputs.size(); ++j) copies.emplace_back(j == k ? probe : inputs[j]);
            std::vector<Var> leaves;
            for (auto& c : copies) leaves.push_back(tape.constant(c));
            return program(tape, leaves).item();
        };
        const Tensor fd = finite_diff_grad(eval, inputs[k], h);
        const std::vector<double> ad = inputs[k].grad ? *inputs[k].grad : std::vector<double>(fd.size(), 0.0);
        result.max_rel_error = std::max(result.max_rel_error, relative_error(ad, fd.data));
        for (std::size_t i = 0; i < fd.size(); ++i) {
            result.max_coord_rel_error = std::max(result.max_coord_rel_error, relative_error(ad[i], fd.data[i]));
            result.max_abs_error = std::max(result.max_abs_error, std::abs(ad[i] - fd.data[i]));
            ++result.coordinates;
        }
    }
    return result;
}

}  // namespace aplab
