#include <algorithm>
#include <cmath>
#include <limits>

#include "aplab/autodiff.hpp"

namespace aplab {

namespace {

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

void check_same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw AutodiffError("operands recorded on different tapes");
}

enum class BinOp { add, sub, mul, div };

const char* bin_name(BinOp op) {
    switch (op) {
        case BinOp::add: return "add";
        case BinOp::sub: return "sub";
        case BinOp::mul: return "mul";
        case BinOp::div: return "div";
    }
    return "?";
}

// b's shape equals a's or is a trailing suffix of it; b is indexed modulo its size.
Var binary(BinOp op, Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!is_suffix(bv.shape, av.shape)) {
        throw DimensionError(std::string(bin_name(op)) + ": cannot combine " + shape_str(av.shape) + " with " +
                             shape_str(bv.shape));
    }
    const std::size_t n = av.size();
    const std::size_t nb = bv.size();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = av.data[i];
        const double y = bv.data[i % nb];
        switch (op) {
            case BinOp::add: out.data[i] = x + y; break;
            case BinOp::sub: out.data[i] = x - y; break;
            case BinOp::mul: out.data[i] = x * y; break;
            case BinOp::div: out.data[i] = x / y; break;
        }
    }
    return a.tape().record(std::move(out), {a, b}, [op, n, nb](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        const std::size_t ia = t.input_id(self, 0);
        const std::size_t ib = t.input_id(self, 1);
        const auto& x = t.value_of(ia).data;
        const auto& y = t.value_of(ib).data;
        if (t.needs_grad_of(ia)) {
            auto ga = t.grad_accumulator(ia);
            for (std::size_t i = 0; i < n; ++i) {
                switch (op) {
                    case BinOp::add:
                    case BinOp::sub: ga[i] += g[i]; break;
                    case BinOp::mul: ga[i] += g[i] * y[i % nb]; break;
                    case BinOp::div: ga[i] += g[i] / y[i % nb]; break;
                }
            }
        }
        if (t.needs_grad_of(ib)) {
            auto gb = t.grad_accumulator(ib);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = i % nb;
                switch (op) {
                    case BinOp::add: gb[j] += g[i]; break;
                    case BinOp::sub: gb[j] -= g[i]; break;
                    case BinOp::mul: gb[j] += g[i] * x[i]; break;
                    case BinOp::div: gb[j] -= g[i] * x[i] / (y[j] * y[j]); break;
                }
            }
        }
    });
}

template <class F, class DF>
Var unary(Var a, F f, DF df_from_xy) {
    const Tensor& av = a.value();
    Tensor out(av.shape);
    for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
    return a.tape().record(std::move(out), {a}, [df_from_xy](Tape& t, std::size_t self) {
        const std::size_t ia = t.input_id(self, 0);
        const auto& g = t.grad_of(self);
        const auto& x = t.value_of(ia).data;
        const auto& y = t.value_of(self).data;
        auto ga = t.grad_accumulator(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_xy(x[i], y[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    if (a.shape() != b.shape() && is_suffix(a.shape(), b.shape())) return binary(BinOp::add, b, a);
    return binary(BinOp::add, a, b);
}

Var sub(Var a, Var b) { return binary(BinOp::sub, a, b); }

Var mul(Var a, Var b) {
    if (a.shape() != b.shape() && is_suffix(a.shape(), b.shape())) return binary(BinOp::mul, b, a);
    return binary(BinOp::mul, a, b);
}

Var div(Var a, Var b) { return binary(BinOp::div, a, b); }

Var scale(Var a, double c) {
    return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
    return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var relu(Var a) {
    double closest = std::numeric_limits<double>::infinity();
    for (double x : a.value().data) closest = std::min(closest, std::abs(x));
    a.tape().note_kink_distance(closest);
    // Subgradient at exactly zero is zero.
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

}  // namespace aplab
