#include <cmath>

#include "aplab/analysis.hpp"

namespace aplab::analysis {

namespace {

// Per-channel (or per-feature) vector from a compact or full-shape prompt;
// throws when the prompt varies along the trailing (spatial / token) axes.
Tensor shared_prompt(const Tensor& delta, std::size_t c, std::size_t spatial, const char* condition) {
    if (delta.shape == Shape{c}) return delta;
    if (delta.size() != c * spatial || delta.shape.empty() || delta.shape[0] != c) {
        throw DimensionError("normtune_from_ap: prompt shape " + shape_str(delta.shape) + " does not fit " +
                             std::to_string(c) + " channels");
    }
    Tensor out(Shape{c});
    for (std::size_t i = 0; i < c; ++i) {
        out.data[i] = delta.data[i * spatial];
        for (std::size_t s = 1; s < spatial; ++s) {
            if (delta.data[i * spatial + s] != out.data[i]) throw PreconditionError(condition);
        }
    }
    return out;
}

struct PathOutputs {
    Tensor block;
    Tensor logits;
};

PathOutputs run_tail(nn::LayeredModel& m, std::size_t site, const Tensor& batch, const Tensor* delta) {
    Tape tape;
    nn::ForwardOptions o;
    o.start_site = site;
    if (delta) o.prompt = nn::Prompt{site, tape.constant(*delta)};
    nn::ForwardResult r = nn::forward(m, tape, tape.constant(batch), o);
    Tensor block = site + 1 < m.num_sites() ? r.activations[site + 1].value() : r.logits.value();
    return {block, r.logits.value()};
}

double discrepancy(const PathOutputs& a, const PathOutputs& b) {
    return std::max(max_abs_diff(a.block.data, b.block.data), max_abs_diff(a.logits.data, b.logits.data));
}

EquivalenceResult cnn_case(const nn::LayeredModel& model, std::size_t site, const Tensor& delta,
                           const Tensor& batch) {
    const nn::LayerBlock& blk = model.blocks[site];
    if (blk.kind != nn::BlockKind::conv_bn_relu) {
        throw PreconditionError("the block after " + nn::site_name(site) + " is not conv+BatchNorm");
    }
    if (blk.kernel != 1 && blk.padding != Padding::circular) {
        throw PreconditionError("convolution must be 1x1 or circularly padded");
    }
    if (batch.rank() != 4) throw DimensionError("normtune_from_ap: CNN batch must be [B,C,H,W]");
    const std::size_t b = batch.shape[0], c = batch.shape[1], h = batch.shape[2], w = batch.shape[3];
    const Tensor d = shared_prompt(delta, c, h * w, "prompt is not spatially uniform");

    const Tensor& weight = blk.params.at("w");
    const std::size_t cout = weight.shape[0];
    const std::size_t taps = weight.shape[2] * weight.shape[3];

    // Statistics of the unprompted convolution on this batch.
    Tape tape;
    const Tensor conv = conv2d(tape.constant(batch), tape.constant(weight), blk.padding).value();
    Tensor mu(Shape{cout}), var(Shape{cout});
    const std::size_t plane = h * w;
    const double count = static_cast<double>(b * plane);
    for (std::size_t o = 0; o < cout; ++o) {
        double s = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t q = 0; q < plane; ++q) s += conv.data[(i * cout + o) * plane + q];
        }
        mu.data[o] = s / count;
        double v = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t q = 0; q < plane; ++q) {
                const double e = conv.data[(i * cout + o) * plane + q] - mu.data[o];
                v += e * e;
            }
        }
        var.data[o] = v / count;
    }

    EquivalenceResult res;
    res.ap_gamma = Tensor(Shape{cout});
    for (std::size_t o = 0; o < cout; ++o) res.ap_gamma.data[o] = std::sqrt(var.data[o] + blk.bn.eps);
    res.ap_beta = mu;
    res.gamma = res.ap_gamma;
    res.beta = Tensor(Shape{cout});
    for (std::size_t o = 0; o < cout; ++o) {
        double wd = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t t = 0; t < taps; ++t) wd += weight.data[(o * c + ci) * taps + t] * d.data[ci];
        }
        res.beta.data[o] = wd + mu.data[o];
    }

    nn::LayeredModel ap = model;
    ap.blocks[site].bn.running_mean = mu;
    ap.blocks[site].bn.running_var = var;
    ap.blocks[site].params["gamma"] = res.ap_gamma;
    ap.blocks[site].params["beta"] = res.ap_beta;
    nn::LayeredModel nt = ap;
    nt.blocks[site].params["beta"] = res.beta;

    const Tensor full = delta.shape == Shape{c} ? [&] {
        Tensor f(Shape{c, h, w});
        for (std::size_t i = 0; i < f.size(); ++i) f.data[i] = d.data[i / plane];
        return f;
    }()
                                                : delta;
    res.max_discrepancy = discrepancy(run_tail(ap, site, batch, &full), run_tail(nt, site, batch, nullptr));
    return res;
}

EquivalenceResult vit_case(const nn::LayeredModel& model, std::size_t site, const Tensor& delta,
                           const Tensor& batch) {
    const nn::LayerBlock& blk = model.blocks[site];
    if (blk.kind != nn::BlockKind::transformer) {
        throw PreconditionError("the block after " + nn::site_name(site) + " is not a transformer block");
    }
    if (batch.rank() != 3) throw DimensionError("normtune_from_ap: ViT batch must be [B,D,P]");
    const std::size_t b = batch.shape[0], dim = batch.shape[1], p = batch.shape[2];
    const Tensor d = shared_prompt(delta, dim, p, "prompt is not shared across tokens");

    // Per-token moments; all must agree for one (gamma, beta) to serve every token.
    double mu0 = 0.0, var0 = 0.0, scale = 0.0;
    for (double v : batch.data) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * std::max(scale, 1.0) * static_cast<double>(dim);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < p; ++t) {
            double s = 0.0;
            for (std::size_t f = 0; f < dim; ++f) s += batch.data[(i * dim + f) * p + t];
            const double mu = s / static_cast<double>(dim);
            double v = 0.0;
            for (std::size_t f = 0; f < dim; ++f) {
                const double e = batch.data[(i * dim + f) * p + t] - mu;
                v += e * e;
            }
            v /= static_cast<double>(dim);
            if (i == 0 && t == 0) {
                mu0 = mu;
                var0 = v;
            } else {
                if (std::abs(mu - mu0) > tol) throw PreconditionError("token means are not equal across the batch");
                if (std::abs(v - var0) > tol * std::max(scale, 1.0)) {
                    throw PreconditionError("token variances are not equal across the batch");
                }
            }
        }
    }

    const double sigma = std::sqrt(var0 + nn::kNormEps);
    EquivalenceResult res;
    res.ap_gamma = Tensor(Shape{dim}, sigma);
    res.ap_beta = Tensor(Shape{dim}, mu0);
    res.gamma = res.ap_gamma;
    res.beta = Tensor(Shape{dim});
    for (std::size_t f = 0; f < dim; ++f) res.beta.data[f] = d.data[f] + mu0;

    nn::LayeredModel ap = model;
    ap.inject_after_norm = true;
    ap.blocks[site].params["ln1.gamma"] = res.ap_gamma;
    ap.blocks[site].params["ln1.beta"] = res.ap_beta;
    nn::LayeredModel nt = ap;
    nt.blocks[site].params["ln1.beta"] = res.beta;

    Tensor full(Shape{dim, p});
    for (std::size_t i = 0; i < full.size(); ++i) full.data[i] = d.data[i / p];
    res.max_discrepancy = discrepancy(run_tail(ap, site, batch, &full), run_tail(nt, site, batch, nullptr));
    return res;
}

}  // namespace

EquivalenceResult normtune_from_ap(const nn::LayeredModel& model, std::size_t site, const Tensor& delta,
                                   const Tensor& batch) {
    if (site >= model.num_sites()) throw std::invalid_argument("normtune_from_ap: unknown site");
    batch.check_finite("equivalence batch");
    delta.check_finite("equivalence prompt");
    return model.arch == nn::Arch::cnn ? cnn_case(model, site, delta, batch) : vit_case(model, site, delta, batch);
}

Tensor equal_moment_tokens(std::size_t b, std::size_t d, std::size_t p, double mu, double sigma,
                           std::mt19937_64& rng) {
    if (d < 2) throw std::invalid_argument("equal_moment_tokens: need at least 2 features");
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor out(Shape{b, d, p});
    std::vector<double> tok(d);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t t = 0; t < p; ++t) {
            double m = 0.0;
            for (auto& v : tok) {
                v = nd(rng);
                m += v;
            }
            m /= static_cast<double>(d);
            double var = 0.0;
            for (auto& v : tok) {
                v -= m;
                var += v * v;
            }
            const double s = std::sqrt(var / static_cast<double>(d));
            for (std::size_t f = 0; f < d; ++f) out.data[(i * d + f) * p + t] = mu + sigma * tok[f] / s;
        }
    }
    return out;
}

}  // namespace aplab::analysis
