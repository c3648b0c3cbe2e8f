#include <algorithm>
#include <cmath>

#include "aplab/autodiff.hpp"

namespace aplab {

namespace {

// Source coordinate for output position `pos` and kernel tap `tap`; -1 marks zero padding.
std::vector<long> tap_table(std::size_t extent, std::size_t kernel, Padding padding) {
    const long n = static_cast<long>(extent);
    const long half = static_cast<long>(kernel / 2);
    std::vector<long> table(extent * kernel);
    for (long p = 0; p < n; ++p)
        for (long k = 0; k < static_cast<long>(kernel); ++k) {
            long s = p + k - half;
            if (padding == Padding::circular) {
                s = ((s % n) + n) % n;
            } else if (s < 0 || s >= n) {
                s = -1;
            }
            table[static_cast<std::size_t>(p) * kernel + static_cast<std::size_t>(k)] = s;
        }
    return table;
}

struct ConvDims {
    std::size_t b, cin, h, w, cout, kh, kw;
};

}  // namespace

Var conv2d(Var x, Var w, Padding padding) {
    if (&x.tape() != &w.tape()) throw AutodiffError("operands recorded on different tapes");
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || ws[2] % 2 == 0 || ws[3] % 2 == 0) {
        throw DimensionError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
    }
    const ConvDims d{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3]};
    auto rows = tap_table(d.h, d.kh, padding);
    auto cols = tap_table(d.w, d.kw, padding);

    Tensor out(Shape{d.b, d.cout, d.h, d.w});
    const auto& xv = x.value().data;
    const auto& wv = w.value().data;
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t o = 0; o < d.cout; ++o) {
            double* dst = out.data.data() + (b * d.cout + o) * d.h * d.w;
            for (std::size_t c = 0; c < d.cin; ++c) {
                const double* src = xv.data() + (b * d.cin + c) * d.h * d.w;
                const double* ker = wv.data() + (o * d.cin + c) * d.kh * d.kw;
                for (std::size_t y = 0; y < d.h; ++y)
                    for (std::size_t i = 0; i < d.kh; ++i) {
                        const long sy = rows[y * d.kh + i];
                        if (sy < 0) continue;
                        const double* srow = src + static_cast<std::size_t>(sy) * d.w;
                        for (std::size_t xx = 0; xx < d.w; ++xx) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < d.kw; ++j) {
                                const long sx = cols[xx * d.kw + j];
                                if (sx >= 0) acc += ker[i * d.kw + j] * srow[sx];
                            }
                            dst[y * d.w + xx] += acc;
                        }
                    }
            }
        }

    return x.tape().record(std::move(out), {x, w},
                           [d, rows = std::move(rows), cols = std::move(cols)](Tape& t, std::size_t self) {
                               const auto& g = t.grad_of(self);
                               const std::size_t ix = t.input_id(self, 0);
                               const std::size_t iw = t.input_id(self, 1);
                               const auto& xv = t.value_of(ix).data;
                               const auto& wv = t.value_of(iw).data;
                               const bool want_x = t.needs_grad_of(ix);
                               const bool want_w = t.needs_grad_of(iw);
                               std::span<double> gx, gw;
                               if (want_x) gx = t.grad_accumulator(ix);
                               if (want_w) gw = t.grad_accumulator(iw);
                               for (std::size_t b = 0; b < d.b; ++b)
                                   for (std::size_t o = 0; o < d.cout; ++o) {
                                       const double* gout = g.data() + (b * d.cout + o) * d.h * d.w;
                                       for (std::size_t c = 0; c < d.cin; ++c) {
                                           const std::size_t plane = (b * d.cin + c) * d.h * d.w;
                                           const std::size_t kbase = (o * d.cin + c) * d.kh * d.kw;
                                           for (std::size_t y = 0; y < d.h; ++y)
                                               for (std::size_t i = 0; i < d.kh; ++i) {
                                                   const long sy = rows[y * d.kh + i];
                                                   if (sy < 0) continue;
                                                   const std::size_t srow = plane + static_cast<std::size_t>(sy) * d.w;
                                                   for (std::size_t xx = 0; xx < d.w; ++xx) {
                                                       const double gv = gout[y * d.w + xx];
                                                       for (std::size_t j = 0; j < d.kw; ++j) {
                                                           const long sx = cols[xx * d.kw + j];
                                                           if (sx < 0) continue;
                                                           const std::size_t k = kbase + i * d.kw + j;
                                                           const std::size_t s = srow + static_cast<std::size_t>(sx);
                                                           if (want_x) gx[s] += gv * wv[k];
                                                           if (want_w) gw[k] += gv * xv[s];
                                                       }
                                                   }
                                               }
                                       }
                                   }
                           });
}

namespace {

struct Interp {
    std::vector<std::size_t> lo, hi;
    std::vector<double> wlo, whi;
};

Interp interp_axis(std::size_t in, std::size_t out) {
    Interp r;
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        const double frac = src - static_cast<double>(lo);
        r.lo.push_back(lo);
        r.hi.push_back(hi);
        r.wlo.push_back(1.0 - frac);
        r.whi.push_back(frac);
    }
    return r;
}

}  // namespace

Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w) {
    const Shape& s = x.shape();
    if (s.size() != 4 || out_h == 0 || out_w == 0) {
        throw DimensionError("resize_bilinear: expected [B,C,H,W], got " + shape_str(s));
    }
    const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
    Interp ry = interp_axis(h, out_h);
    Interp rx = interp_axis(w, out_w);
    Tensor out(Shape{s[0], s[1], out_h, out_w});
    const auto& xv = x.value().data;
    for (std::size_t p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * h * w;
        double* dst = out.data.data() + p * out_h * out_w;
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t xx = 0; xx < out_w; ++xx) {
                dst[y * out_w + xx] = ry.wlo[y] * (rx.wlo[xx] * src[ry.lo[y] * w + rx.lo[xx]] +
                                                   rx.whi[xx] * src[ry.lo[y] * w + rx.hi[xx]]) +
                                      ry.whi[y] * (rx.wlo[xx] * src[ry.hi[y] * w + rx.lo[xx]] +
                                                   rx.whi[xx] * src[ry.hi[y] * w + rx.hi[xx]]);
            }
    }
    return x.tape().record(std::move(out), {x},
                           [planes, h, w, out_h, out_w, ry = std::move(ry), rx = std::move(rx)](Tape& t,
                                                                                                  std::size_t self) {
                               const auto& g = t.grad_of(self);
                               auto gx = t.grad_accumulator(t.input_id(self, 0));
                               for (std::size_t p = 0; p < planes; ++p) {
                                   double* dst = gx.data() + p * h * w;
                                   const double* gp = g.data() + p * out_h * out_w;
                                   for (std::size_t y = 0; y < out_h; ++y)
                                       for (std::size_t xx = 0; xx < out_w; ++xx) {
                                           const double gv = gp[y * out_w + xx];
                                           dst[ry.lo[y] * w + rx.lo[xx]] += gv * ry.wlo[y] * rx.wlo[xx];
                                           dst[ry.lo[y] * w + rx.hi[xx]] += gv * ry.wlo[y] * rx.whi[xx];
                                           dst[ry.hi[y] * w + rx.lo[xx]] += gv * ry.whi[y] * rx.wlo[xx];
                                           dst[ry.hi[y] * w + rx.hi[xx]] += gv * ry.whi[y] * rx.whi[xx];
                                       }
                               }
                           });
}

Var frame_compose(Var frame, Var center, std::size_t out_h, std::size_t out_w) {
    if (&frame.tape() != &center.tape()) throw AutodiffError("operands recorded on different tapes");
    const Shape& cs = center.shape();
    const Shape& fs = frame.shape();
    if (cs.size() != 4 || cs[2] > out_h || cs[3] > out_w) {
        throw DimensionError("frame_compose: center " + shape_str(cs) + " does not fit in " + std::to_string(out_h) +
                             "x" + std::to_string(out_w));
    }
    const std::size_t b = cs[0], c = cs[1], h = cs[2], w = cs[3];
    const std::size_t frame_count = out_h * out_w - h * w;
    if (fs.size() != 2 || fs[0] != c || fs[1] != frame_count) {
        throw DimensionError("frame_compose: frame " + shape_str(fs) + " must be [" + std::to_string(c) + "," +
                             std::to_string(frame_count) + "]");
    }
    const std::size_t top = (out_h - h) / 2, left = (out_w - w) / 2;
    // Per canvas pixel: frame slot (>= 0) or center pixel encoded as -(1 + index).
    std::vector<long> source(out_h * out_w);
    {
        long next = 0;
        for (std::size_t y = 0; y < out_h; ++y)
            for (std::size_t x = 0; x < out_w; ++x) {
                const bool inside = y >= top && y < top + h && x >= left && x < left + w;
                source[y * out_w + x] = inside ? -(1 + static_cast<long>((y - top) * w + (x - left))) : next++;
            }
    }
    Tensor out(Shape{b, c, out_h, out_w});
    const auto& fv = frame.value().data;
    const auto& cv = center.value().data;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t p = 0; p < out_h * out_w; ++p) {
                const long s = source[p];
                out.data[(bi * c + ci) * out_h * out_w + p] =
                    s >= 0 ? fv[ci * frame_count + static_cast<std::size_t>(s)]
                           : cv[(bi * c + ci) * h * w + static_cast<std::size_t>(-s - 1)];
            }
    return frame.tape().record(
        std::move(out), {frame, center},
        [b, c, h, w, out_h, out_w, frame_count, source = std::move(source)](Tape& t, std::size_t self) {
            const auto& g = t.grad_of(self);
            const std::size_t i_frame = t.input_id(self, 0);
            const std::size_t i_center = t.input_id(self, 1);
            const bool want_f = t.needs_grad_of(i_frame);
            const bool want_c = t.needs_grad_of(i_center);
            std::span<double> gf, gc;
            if (want_f) gf = t.grad_accumulator(i_frame);
            if (want_c) gc = t.grad_accumulator(i_center);
            for (std::size_t bi = 0; bi < b; ++bi)
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t p = 0; p < out_h * out_w; ++p) {
                        const double gv = g[(bi * c + ci) * out_h * out_w + p];
                        const long s = source[p];
                        if (s >= 0) {
                            if (want_f) gf[ci * frame_count + static_cast<std::size_t>(s)] += gv;
                        } else if (want_c) {
                            gc[(bi * c + ci) * h * w + static_cast<std::size_t>(-s - 1)] += gv;
                        }
                    }
        });
}

}  // namespace aplab
