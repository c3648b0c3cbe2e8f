#include <numeric>

#include "aplab/autodiff.hpp"

namespace aplab {

namespace {

struct MatmulDims {
    std::size_t batch, m, k, n;
    std::size_t stride_a, stride_b;  // 0 when the operand is shared across the batch
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
    auto fail = [&] {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    };
    if (a.size() < 2 || a.size() > 3 || b.size() < 2 || b.size() > 3) fail();
    const std::size_t ba = a.size() == 3 ? a[0] : 1;
    const std::size_t bb = b.size() == 3 ? b[0] : 1;
    if (a.size() == 3 && b.size() == 3 && ba != bb) fail();
    const std::size_t m = a[a.size() - 2];
    const std::size_t k = a[a.size() - 1];
    const std::size_t k2 = b[b.size() - 2];
    const std::size_t n = b[b.size() - 1];
    if (k != k2) fail();
    return {std::max(ba, bb), m, k, n, a.size() == 3 ? m * k : 0, b.size() == 3 ? k * n : 0};
}

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g + i * n;
        double* ci = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* bp = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
            ci[p] += s;
        }
    }
}

// c[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        const double* gi = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            double* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
        }
    }
}

Shape strides_of(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

}  // namespace

Var matmul(Var a, Var b) {
    if (&a.tape() != &b.tape()) throw AutodiffError("operands recorded on different tapes");
    const MatmulDims d = matmul_dims(a.shape(), b.shape());
    Shape out_shape = (a.shape().size() == 3 || b.shape().size() == 3) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
    Tensor out(out_shape);
    const double* ap = a.value().data.data();
    const double* bp = b.value().data.data();
    for (std::size_t q = 0; q < d.batch; ++q) {
        gemm_nn(ap + q * d.stride_a, bp + q * d.stride_b, out.data.data() + q * d.m * d.n, d.m, d.k, d.n);
    }
    return a.tape().record(std::move(out), {a, b}, [d](Tape& t, std::size_t self) {
        const double* g = t.grad_of(self).data();
        const std::size_t ia = t.input_id(self, 0);
        const std::size_t ib = t.input_id(self, 1);
        if (t.needs_grad_of(ia)) {
            auto ga = t.grad_accumulator(ia);
            const double* bv = t.value_of(ib).data.data();
            for (std::size_t q = 0; q < d.batch; ++q) {
                gemm_nt(g + q * d.m * d.n, bv + q * d.stride_b, ga.data() + q * d.stride_a, d.m, d.k, d.n);
            }
        }
        if (t.needs_grad_of(ib)) {
            auto gb = t.grad_accumulator(ib);
            const double* av = t.value_of(ia).data.data();
            for (std::size_t q = 0; q < d.batch; ++q) {
                gemm_tn(av + q * d.stride_a, g + q * d.m * d.n, gb.data() + q * d.stride_b, d.m, d.k, d.n);
            }
        }
    });
}

Var permute(Var a, std::vector<std::size_t> axes) {
    const Shape& in = a.shape();
    const std::size_t r = in.size();
    if (axes.size() != r) throw DimensionError("permute: axis list does not match rank of " + shape_str(in));
    std::vector<bool> seen(r, false);
    for (auto ax : axes) {
        if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis list for " + shape_str(in));
        seen[ax] = true;
    }
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
    const Shape in_strides = strides_of(in);
    // For each output flat index, the matching input flat index.
    const std::size_t n = numel(in);
    std::vector<std::size_t> src(n);
    {
        std::vector<std::size_t> idx(r, 0);
        for (std::size_t o = 0; o < n; ++o) {
            std::size_t s = 0;
            for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_strides[axes[i]];
            src[o] = s;
            for (std::size_t i = r; i-- > 0;) {
                if (++idx[i] < out_shape[i]) break;
                idx[i] = 0;
            }
        }
    }
    Tensor out(out_shape);
    const auto& av = a.value().data;
    for (std::size_t o = 0; o < n; ++o) out.data[o] = av[src[o]];
    return a.tape().record(std::move(out), {a}, [src = std::move(src)](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto ga = t.grad_accumulator(t.input_id(self, 0));
        for (std::size_t o = 0; o < g.size(); ++o) ga[src[o]] += g[o];
    });
}

Var transpose(Var a) {
    const std::size_t r = a.shape().size();
    if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(a.shape()));
    std::vector<std::size_t> axes(r);
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    std::swap(axes[r - 1], axes[r - 2]);
    return permute(a, std::move(axes));
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a}, [](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto ga = t.grad_accumulator(t.input_id(self, 0));
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var broadcast_axis(Var a, int axis, std::size_t n) {
    const Shape& in = a.shape();
    const std::size_t ax = normalize_axis(axis, in.size() + 1);
    if (n == 0) throw DimensionError("broadcast_axis: zero extent");
    Shape out_shape = in;
    out_shape.insert(out_shape.begin() + static_cast<long>(ax), n);
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= in[i];
    for (std::size_t i = ax; i < in.size(); ++i) inner *= in[i];
    Tensor out(out_shape);
    const auto& av = a.value().data;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t r = 0; r < n; ++r)
            std::copy_n(av.begin() + static_cast<long>(o * inner), inner,
                        out.data.begin() + static_cast<long>((o * n + r) * inner));
    return a.tape().record(std::move(out), {a}, [outer, inner, n](Tape& t, std::size_t self) {
        const auto& g = t.grad_of(self);
        auto ga = t.grad_accumulator(t.input_id(self, 0));
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t i = 0; i < inner; ++i) ga[o * inner + i] += g[(o * n + r) * inner + i];
    });
}

}  // namespace aplab
