#include <cmath>
#include <random>

#include "aplab/nn.hpp"

namespace aplab::nn {

std::string to_string(Arch a) { return a == Arch::cnn ? "cnn" : "vit"; }

std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::conv2d: return "conv2d";
        case BlockKind::conv_bn_relu: return "conv_bn_relu";
        case BlockKind::patch_embed: return "patch_embed";
        case BlockKind::transformer: return "transformer";
        case BlockKind::head: return "head";
    }
    return "?";
}

std::string site_name(std::size_t i) { return "site_" + std::to_string(i); }

std::size_t LayerBlock::param_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params) n += t.size();
    return n;
}

std::vector<std::string> LayeredModel::site_names() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < num_sites(); ++i) out.push_back(site_name(i));
    return out;
}

std::size_t LayeredModel::site_index(const std::string& site) const {
    const std::string prefix = "site_";
    if (site.rfind(prefix, 0) == 0 && site.size() > prefix.size()) {
        std::size_t pos = 0;
        const std::string digits = site.substr(prefix.size());
        if (digits.find_first_not_of("0123456789") == std::string::npos) {
            const unsigned long i = std::stoul(digits, &pos);
            if (i < num_sites()) return i;
        }
    }
    throw std::invalid_argument("unknown hook site '" + site + "' (model has site_0..site_" +
                                std::to_string(num_sites() - 1) + ")");
}

std::size_t LayeredModel::param_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.param_count();
    return n;
}

std::size_t LayeredModel::norm_width_total() const {
    std::size_t n = 0;
    for (const auto& b : blocks) {
        for (const auto& [name, t] : b.params) {
            if (name == "gamma" || name.ends_with(".gamma")) n += t.size();
        }
    }
    return n;
}

std::size_t LayeredModel::norm_layer_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks) {
        for (const auto& [name, t] : b.params) {
            if (name == "gamma" || name.ends_with(".gamma")) ++n;
        }
    }
    return n;
}

void LayeredModel::set_requires_grad(bool on) {
    for (auto& b : blocks) {
        for (auto& [_, t] : b.params) t.requires_grad = on;
    }
}

void LayeredModel::zero_grad() {
    for (auto& b : blocks) {
        for (auto& [_, t] : b.params) t.zero_grad();
    }
}

namespace {

Var param(Tape& tape, LayerBlock& b, const std::string& name) {
    auto it = b.params.find(name);
    if (it == b.params.end()) throw std::invalid_argument("block " + b.name + " has no parameter " + name);
    return tape.leaf(it->second);
}

// [B,C,H,W] -> [B, C*p*p, (H/p)*(W/p)], tokens in row-major patch order.
Var patchify(Var x, std::size_t p) {
    const Shape s = x.shape();
    if (s.size() != 4 || s[2] % p != 0 || s[3] % p != 0) {
        throw DimensionError("patchify: " + shape_str(s) + " is not divisible into " + std::to_string(p) + "x" +
                             std::to_string(p) + " patches");
    }
    const std::size_t gh = s[2] / p, gw = s[3] / p;
    Var split = reshape(x, Shape{s[0], s[1], gh, p, gw, p});
    Var moved = permute(split, {0, 1, 3, 5, 2, 4});
    return reshape(moved, Shape{s[0], s[1] * p * p, gh * gw});
}

Var block_forward(LayerBlock& b, Tape& tape, Var h, bool training, Var after_norm, ForwardResult& res) {
    switch (b.kind) {
        case BlockKind::conv2d: {
            Var y = conv2d(h, param(tape, b, "w"), b.padding);
            return add(y, channel_expand(param(tape, b, "b"), y.shape()[2], y.shape()[3]));
        }
        case BlockKind::conv_bn_relu:
            return conv_bn_relu_block(h, param(tape, b, "w"), param(tape, b, "gamma"), param(tape, b, "beta"), b.bn,
                                      training, b.padding);
        case BlockKind::patch_embed: {
            Var tokens = b.patch > 0 ? patchify(h, b.patch) : h;
            return add(token_linear(tokens, param(tape, b, "w"), param(tape, b, "b")), param(tape, b, "pos"));
        }
        case BlockKind::transformer: {
            Var n1 = layernorm(h, param(tape, b, "ln1.gamma"), param(tape, b, "ln1.beta"));
            if (after_norm.valid()) n1 = add(n1, after_norm);
            AttentionOutput att =
                attention_block(n1, param(tape, b, "wq"), param(tape, b, "wk"), param(tape, b, "wv"), b.attn_scale);
            res.attention.push_back(att.attn);
            Var z1 = add(h, matmul(param(tape, b, "wo"), att.out));
            Var n2 = layernorm(z1, param(tape, b, "ln2.gamma"), param(tape, b, "ln2.beta"));
            return add(z1, token_mlp(n2, param(tape, b, "mlp.w1"), param(tape, b, "mlp.b1"), param(tape, b, "mlp.w2"),
                                     param(tape, b, "mlp.b2")));
        }
        case BlockKind::head: {
            const Shape& s = h.shape();
            Var pooled;
            if (s.size() == 4) {
                pooled = mean(reshape(h, Shape{s[0], s[1], s[2] * s[3]}), 2);
            } else if (s.size() == 3) {
                pooled = mean(h, 2);
            } else {
                throw DimensionError("head: cannot pool " + shape_str(s));
            }
            return linear(pooled, param(tape, b, "w"), param(tape, b, "b"));
        }
    }
    throw std::logic_error("unhandled block kind");
}

}  // namespace

ForwardResult forward(LayeredModel& model, Tape& tape, Var x, const ForwardOptions& opts) {
    const std::size_t n = model.num_sites();
    if (opts.start_site >= n) throw std::invalid_argument("forward: start site out of range");
    if (opts.prompt && (opts.prompt->site >= n || opts.prompt->site < opts.start_site)) {
        throw std::invalid_argument("forward: prompt site " + site_name(opts.prompt->site) + " is not reachable");
    }
    const bool training = opts.mode == Mode::train;
    ForwardResult res;
    res.activations.resize(n);
    Var h = x;
    for (std::size_t i = opts.start_site; i < n; ++i) {
        LayerBlock& b = model.blocks[i];
        Var after_norm;
        if (opts.prompt && opts.prompt->site == i) {
            if (model.inject_after_norm && b.kind == BlockKind::transformer) {
                after_norm = opts.prompt->delta;
            } else {
                h = add(h, opts.prompt->delta);
            }
        }
        res.activations[i] = h;
        h = block_forward(b, tape, h, training, after_norm, res);
    }
    res.logits = h;
    return res;
}

std::vector<Shape> site_shapes(LayeredModel& model, const Shape& input_shape) {
    Shape batched{1};
    batched.insert(batched.end(), input_shape.begin(), input_shape.end());
    Tape tape;
    ForwardResult r = forward(model, tape, tape.constant(Tensor(batched)));
    std::vector<Shape> out;
    for (const Var& a : r.activations) out.emplace_back(a.shape().begin() + 1, a.shape().end());
    return out;
}

namespace {

Tensor gaussian(Shape s, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, stddev);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = nd(rng);
    return t;
}

LayerBlock make_head(std::size_t in, std::size_t classes, std::mt19937_64& rng) {
    LayerBlock b;
    b.kind = BlockKind::head;
    b.name = "head";
    b.params["w"] = gaussian({classes, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    b.params["b"] = Tensor::zeros({classes});
    return b;
}

}  // namespace

LayeredModel build_toy_cnn(const ToyCnnConfig& cfg, std::uint64_t seed) {
    if (cfg.kernel % 2 == 0) throw std::invalid_argument("build_toy_cnn: kernel must be odd");
    std::mt19937_64 rng(seed);
    LayeredModel m;
    m.arch = Arch::cnn;
    m.num_classes = cfg.num_classes;

    LayerBlock stem;
    stem.kind = BlockKind::conv2d;
    stem.name = "stem";
    stem.kernel = 1;
    stem.padding = cfg.padding;
    stem.params["w"] = gaussian({cfg.channels, cfg.in_channels, 1, 1},
                                std::sqrt(1.0 / static_cast<double>(cfg.in_channels)), rng);
    stem.params["b"] = Tensor::zeros({cfg.channels});
    m.blocks.push_back(std::move(stem));

    const double fan_in = static_cast<double>(cfg.channels * cfg.kernel * cfg.kernel);
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        LayerBlock b;
        b.kind = BlockKind::conv_bn_relu;
        b.name = "block" + std::to_string(i + 1);
        b.kernel = cfg.kernel;
        b.padding = cfg.padding;
        b.params["w"] = gaussian({cfg.channels, cfg.channels, cfg.kernel, cfg.kernel}, std::sqrt(2.0 / fan_in), rng);
        b.params["gamma"] = Tensor::ones({cfg.channels});
        b.params["beta"] = Tensor::zeros({cfg.channels});
        b.bn.running_mean = Tensor::zeros({cfg.channels});
        b.bn.running_var = Tensor::ones({cfg.channels});
        m.blocks.push_back(std::move(b));
    }
    m.blocks.push_back(make_head(cfg.channels, cfg.num_classes, rng));
    return m;
}

LayeredModel build_toy_vit(const ToyVitConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    LayeredModel m;
    m.arch = Arch::vit;
    m.num_classes = cfg.num_classes;
    m.inject_after_norm = cfg.inject_after_norm;
    const std::size_t d = cfg.width;
    const std::size_t in_dim = cfg.in_channels * (cfg.patch > 0 ? cfg.patch * cfg.patch : 1);
    const double inv_d = 1.0 / static_cast<double>(d);

    LayerBlock embed;
    embed.kind = BlockKind::patch_embed;
    embed.name = "embed";
    embed.patch = cfg.patch;
    embed.params["w"] = gaussian({d, in_dim}, std::sqrt(1.0 / static_cast<double>(in_dim)), rng);
    embed.params["b"] = Tensor::zeros({d});
    embed.params["pos"] = gaussian({d, cfg.tokens}, 0.1, rng);
    m.blocks.push_back(std::move(embed));

    for (std::size_t i = 0; i < cfg.blocks; ++i) {
        LayerBlock b;
        b.kind = BlockKind::transformer;
        b.name = "block" + std::to_string(i + 1);
        b.attn_scale = std::sqrt(inv_d);
        b.params["ln1.gamma"] = Tensor::ones({d});
        b.params["ln1.beta"] = Tensor::zeros({d});
        b.params["wq"] = gaussian({d, d}, std::sqrt(inv_d), rng);
        b.params["wk"] = gaussian({d, d}, std::sqrt(inv_d), rng);
        b.params["wv"] = gaussian({d, d}, std::sqrt(inv_d), rng);
        b.params["wo"] = gaussian({d, d}, std::sqrt(inv_d), rng);
        b.params["ln2.gamma"] = Tensor::ones({d});
        b.params["ln2.beta"] = Tensor::zeros({d});
        b.params["mlp.w1"] = gaussian({cfg.mlp_hidden, d}, std::sqrt(2.0 * inv_d), rng);
        b.params["mlp.b1"] = Tensor::zeros({cfg.mlp_hidden});
        b.params["mlp.w2"] = gaussian({d, cfg.mlp_hidden}, std::sqrt(1.0 / static_cast<double>(cfg.mlp_hidden)), rng);
        b.params["mlp.b2"] = Tensor::zeros({d});
        m.blocks.push_back(std::move(b));
    }
    m.blocks.push_back(make_head(d, cfg.num_classes, rng));
    return m;
}

}  // namespace aplab::nn
