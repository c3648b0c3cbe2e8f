#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aplab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand extents do not agree; the message names every shape involved.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised for NaN/Inf where a finite value is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of the tape (non-scalar root, double backward, foreign variable).
class AutodiffError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/**
 * Dense row-major f64 array.
 *
 * `grad` is absent until a backward pass reaches this tensor through
 * Tape::leaf(). Extents are strictly positive; a rank-0 tensor (empty
 * shape) holds exactly one value.
 */
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0);
    Tensor(Shape s, std::vector<double> values);

    static Tensor scalar(double v);
    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(int axis) const;

    double item() const;
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    /// Multi-index access; the number of indices must equal rank().
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    bool all_finite() const;
    /// Throws NumericError naming `what` if any element is NaN or infinite.
    void check_finite(const std::string& what) const;

    void zero_grad() { grad.reset(); }

    /// Same data, new extents; numel must match.
    Tensor reshaped(Shape s) const;
};

/// Normalizes a possibly negative axis against `rank`; throws DimensionError when out of range.
std::size_t normalize_axis(int axis, std::size_t rank);

double max_abs_diff(std::span<const double> a, std::span<const double> b);
bool bitwise_equal(std::span<const double> a, std::span<const double> b);

}  // namespace aplab
