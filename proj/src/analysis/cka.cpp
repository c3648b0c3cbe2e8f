#include <cmath>

#include "aplab/analysis.hpp"

namespace aplab::analysis {

namespace {

struct Centered {
    std::size_t n = 0;
    std::size_t p = 0;
    std::vector<double> data;  // row-major [n,p]
};

Centered center(const Tensor& t, const char* which) {
    if (t.rank() < 2) throw DimensionError(std::string("cka: ") + which + " must be [n, features], got " +
                                           shape_str(t.shape));
    Centered c;
    c.n = t.shape[0];
    c.p = t.size() / c.n;
    c.data = t.data;
    for (std::size_t j = 0; j < c.p; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < c.n; ++i) mu += c.data[i * c.p + j];
        mu /= static_cast<double>(c.n);
        for (std::size_t i = 0; i < c.n; ++i) c.data[i * c.p + j] -= mu;
    }
    return c;
}

// ||A^T B||_F^2 for centered A [n,p], B [n,q].
double cross_frobenius_sq(const Centered& a, const Centered& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.p; ++i) {
        for (std::size_t j = 0; j < b.p; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < a.n; ++r) s += a.data[r * a.p + i] * b.data[r * b.p + j];
            total += s * s;
        }
    }
    return total;
}

}  // namespace

double linear_cka(const Tensor& x, const Tensor& y) {
    if (x.rank() < 1 || y.rank() < 1 || x.shape[0] != y.shape[0]) {
        throw DimensionError("cka: sample counts differ, " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    }
    if (x.shape[0] < 2) throw DimensionError("cka: need at least 2 samples");
    x.check_finite("cka input X");
    y.check_finite("cka input Y");
    const Centered xc = center(x, "X");
    const Centered yc = center(y, "Y");
    const double xx = std::sqrt(cross_frobenius_sq(xc, xc));
    const double yy = std::sqrt(cross_frobenius_sq(yc, yc));
    if (xx == 0.0 || yy == 0.0) throw UndefinedSimilarity("cka: constant activations, similarity undefined");
    return cross_frobenius_sq(yc, xc) / (xx * yy);
}

SimilarityMatrix cka_matrix(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    SimilarityMatrix m;
    m.rows = a.size();
    m.cols = b.size();
    m.values.reserve(m.rows * m.cols);
    for (const auto& x : a) {
        for (const auto& y : b) m.values.push_back(linear_cka(x, y));
    }
    return m;
}

}  // namespace aplab::analysis
