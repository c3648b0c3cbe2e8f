#include <algorithm>
#include <cmath>

#include "aplab/autodiff.hpp"

namespace aplab {

namespace {

struct AxisSplit {
    std::size_t outer, len, inner;
    Shape reduced;  // input shape with the axis removed
};

AxisSplit split_axis(const Shape& s, int axis) {
    const std::size_t ax = normalize_axis(axis, s.size());
    AxisSplit r{1, s[ax], 1, {}};
    for (std::size_t i = 0; i < ax; ++i) r.outer *= s[i];
    for (std::size_t i = ax + 1; i < s.size(); ++i) r.inner *= s[i];
    r.reduced = s;
    r.reduced.erase(r.reduced.begin() + static_cast<long>(ax));
    return r;
}

inline std::size_t at(const AxisSplit& sp, std::size_t o, std::size_t l, std::size_t i) {
    return (o * sp.len + l) * sp.inner + i;
}

}  // namespace

Var sum(Var a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis);
    Tensor out(sp.reduced);
    const auto& x = a.value().data;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i) out.data[o * sp.inner + i] += x[at(sp, o, l, i)];
    return a.tape().record(std::move(out), {a}, [sp](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto ga = t.grad_accumulator(t.input_id(self, 0));
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < sp.len; ++l)
                for (std::size_t i = 0; i < sp.inner; ++i) ga[at(sp, o, l, i)] += g[o * sp.inner + i];
    });
}

Var mean(Var a, int axis) {
    const std::size_t len = a.shape()[normalize_axis(axis, a.shape().size())];
    return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

Var var(Var a, int axis) {
    const AxisSplit sp = split_axis(a.shape(), axis);
    const auto& x = a.value().data;
    const double inv_n = 1.0 / static_cast<double>(sp.len);
    std::vector<double> mu(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i) mu[o * sp.inner + i] += x[at(sp, o, l, i)];
    for (auto& m : mu) m *= inv_n;
    Tensor out(sp.reduced);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const double c = x[at(sp, o, l, i)] - mu[o * sp.inner + i];
                out.data[o * sp.inner + i] += c * c;
            }
    for (auto& v : out.data) v *= inv_n;
    return a.tape().record(std::move(out), {a}, [sp, mu = std::move(mu), inv_n](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const std::size_t ia = t.input_id(self, 0);
        const auto& xv = t.value_of(ia).data;
        auto ga = t.grad_accumulator(ia);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t l = 0; l < sp.len; ++l)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const std::size_t k = at(sp, o, l, i);
                    ga[k] += g[o * sp.inner + i] * 2.0 * inv_n * (xv[k] - mu[o * sp.inner + i]);
                }
    });
}

Var sum_all(Var a) {
    double s = 0.0;
    for (double v : a.value().data) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [](Tape& t, std::size_t self) {
        const double g = t.grad_of(self)[0];
        auto ga = t.grad_accumulator(t.input_id(self, 0));
        for (auto& v : ga) v += g;
    });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Var softmax(Var a, int axis) {
    a.value().check_finite("softmax");
    const AxisSplit sp = split_axis(a.shape(), axis);
    const auto& x = a.value().data;
    Tensor out(a.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double mx = x[at(sp, o, 0, i)];
            for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, x[at(sp, o, l, i)]);
            double z = 0.0;
            for (std::size_t l = 0; l < sp.len; ++l) {
                const double e = std::exp(x[at(sp, o, l, i)] - mx);
                out.data[at(sp, o, l, i)] = e;
                z += e;
            }
            for (std::size_t l = 0; l < sp.len; ++l) out.data[at(sp, o, l, i)] /= z;
        }
    return a.tape().record(std::move(out), {a}, [sp](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const auto& y = t.value_of(self).data;
        auto ga = t.grad_accumulator(t.input_id(self, 0));
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                double dot = 0.0;
                for (std::size_t l = 0; l < sp.len; ++l) dot += g[at(sp, o, l, i)] * y[at(sp, o, l, i)];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t k = at(sp, o, l, i);
                    ga[k] += y[k] * (g[k] - dot);
                }
            }
    });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
    const Shape& s = logits.shape();
    if (s.size() != 2 || s[0] != labels.size()) {
        throw DimensionError("cross_entropy: logits " + shape_str(s) + " vs " + std::to_string(labels.size()) +
                             " labels");
    }
    const std::size_t b = s[0], c = s[1];
    const auto& x = logits.value().data;
    std::vector<double> probs(b * c);
    std::vector<int> lab(labels.begin(), labels.end());
    double loss = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        if (lab[r] < 0 || static_cast<std::size_t>(lab[r]) >= c) throw DimensionError("cross_entropy: label out of range");
        const double* row = x.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double log_z = std::log(z) + mx;
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - log_z);
        loss += log_z - row[lab[r]];
    }
    loss /= static_cast<double>(b);
    return logits.tape().record(Tensor::scalar(loss), {logits},
                                [probs = std::move(probs), lab = std::move(lab), b, c](Tape& t, std::size_t self) {
                                    const double g = t.grad_of(self)[0] / static_cast<double>(b);
                                    auto ga = t.grad_accumulator(t.input_id(self, 0));
                                    for (std::size_t r = 0; r < b; ++r)
                                        for (std::size_t j = 0; j < c; ++j) {
                                            const double target = static_cast<int>(j) == lab[r] ? 1.0 : 0.0;
                                            ga[r * c + j] += g * (probs[r * c + j] - target);
                                        }
                                });
}

}  // namespace aplab
