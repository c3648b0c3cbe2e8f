#include "aplab/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace aplab {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& s) {
    for (auto e : s) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
    }
}

}  // namespace

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)) {
    check_extents(shape);
    data.assign(numel(shape), fill);
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_extents(shape);
    if (numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                             " values, got " + std::to_string(data.size()));
    }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix literal");
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::dim(int axis) const { return shape[normalize_axis(axis, shape.size())]; }

double Tensor::item() const {
    if (data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape));
    return data[0];
}

namespace {

std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
    if (index.size() != shape.size()) {
        throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + shape_str(shape));
    }
    std::size_t flat = 0;
    std::size_t k = 0;
    for (auto i : index) {
        if (i >= shape[k]) throw DimensionError("index out of range for shape " + shape_str(shape));
        flat = flat * shape[k] + i;
        ++k;
    }
    return flat;
}

}  // namespace

double& Tensor::at(std::initializer_list<std::size_t> index) { return data[flat_index(shape, index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return data[flat_index(shape, index)]; }

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::check_finite(const std::string& what) const {
    if (!all_finite()) throw NumericError(what + ": non-finite value in tensor of shape " + shape_str(shape));
}

Tensor Tensor::reshaped(Shape s) const {
    if (numel(s) != data.size()) {
        throw DimensionError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data);
}

std::size_t normalize_axis(int axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    long a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    }
    return static_cast<std::size_t>(a);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("max_abs_diff on different sizes");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace aplab
