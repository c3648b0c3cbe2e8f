#include <cmath>

#include "aplab/nn.hpp"

namespace aplab::nn {

namespace {

AttentionOutput attend(Var queries, Var keys_values, Var wq, Var wk, Var wv, double score_scale) {
    Var q = matmul(wq, queries);
    Var k = matmul(wk, keys_values);
    Var v = matmul(wv, keys_values);
    Var scores = matmul(transpose(k), q);
    if (score_scale != 1.0) scores = aplab::scale(scores, score_scale);
    Var attn = softmax(scores, -2);
    return {matmul(v, attn), attn};
}

}  // namespace

Var linear(Var x, Var w, Var b) {
    if (x.value().rank() != 2) throw DimensionError("linear: expected [B,in], got " + shape_str(x.shape()));
    return add(matmul(x, transpose(w)), b);
}

Var token_linear(Var z, Var w, Var b) {
    Var y = matmul(w, z);
    return add(y, broadcast_axis(b, 1, y.shape().back()));
}

Var token_mlp(Var z, Var w1, Var b1, Var w2, Var b2) {
    return token_linear(relu(token_linear(z, w1, b1)), w2, b2);
}

Var channel_expand(Var v, std::size_t h, std::size_t w) {
    return broadcast_axis(broadcast_axis(v, 1, h), 2, w);
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, bool training) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw DimensionError("batchnorm: expected [B,C,H,W], got " + shape_str(s));
    const std::size_t c = s[1], h = s[2], w = s[3];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw DimensionError("batchnorm: affine shapes " + shape_str(gamma.shape()) + ", " +
                             shape_str(beta.shape()) + " do not match " + shape_str(s));
    }
    Tape& tape = x.tape();
    Var mu, variance;
    if (training) {
        Var flat = reshape(permute(x, {1, 0, 2, 3}), Shape{c, s[0] * h * w});
        mu = mean(flat, 1);
        variance = var(flat, 1);
        const Tensor& bm = mu.value();
        const Tensor& bv = variance.value();
        if (state.running_mean.shape != Shape{c}) state.running_mean = Tensor::zeros({c});
        if (state.running_var.shape != Shape{c}) state.running_var = Tensor::ones({c});
        for (std::size_t i = 0; i < c; ++i) {
            if (bv.data[i] < state.eps) ++state.degenerate_channels;
            state.running_mean.data[i] =
                (1.0 - state.momentum) * state.running_mean.data[i] + state.momentum * bm.data[i];
            state.running_var.data[i] =
                (1.0 - state.momentum) * state.running_var.data[i] + state.momentum * bv.data[i];
        }
    } else {
        if (state.running_mean.shape != Shape{c} || state.running_var.shape != Shape{c}) {
            throw DimensionError("batchnorm: running statistics missing for " + std::to_string(c) + " channels");
        }
        mu = tape.constant(state.running_mean);
        variance = tape.constant(state.running_var);
    }
    Var centered = sub(x, channel_expand(mu, h, w));
    Var denom = channel_expand(sqrt(add_scalar(variance, state.eps)), h, w);
    Var normalized = div(centered, denom);
    return add(mul(normalized, channel_expand(gamma, h, w)), channel_expand(beta, h, w));
}

Var layernorm(Var z, Var gamma, Var beta, double eps) {
    const Shape& s = z.shape();
    if (s.size() < 2) throw DimensionError("layernorm: expected tokens [..,D,P], got " + shape_str(s));
    const int feat = static_cast<int>(s.size()) - 2;
    const std::size_t d = s[feat], p = s.back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw DimensionError("layernorm: affine shapes " + shape_str(gamma.shape()) + ", " +
                             shape_str(beta.shape()) + " do not match " + shape_str(s));
    }
    Var mu = broadcast_axis(mean(z, feat), feat, d);
    Var sd = broadcast_axis(sqrt(add_scalar(var(z, feat), eps)), feat, d);
    Var normalized = div(sub(z, mu), sd);
    return add(mul(normalized, broadcast_axis(gamma, 1, p)), broadcast_axis(beta, 1, p));
}

AttentionOutput attention_block(Var z, Var wq, Var wk, Var wv, double score_scale) {
    return attend(z, z, wq, wk, wv, score_scale);
}

Var conv_bn_relu_block(Var z, Var w, Var gamma, Var beta, BatchNormState& state, bool training,
                       Padding padding) {
    return relu(batchnorm(conv2d(z, w, padding), gamma, beta, state, training));
}

TwoLayerVitVars bind_constants(Tape& tape, const TwoLayerVitParams& p) {
    return {tape.constant(p.wq1), tape.constant(p.wk1), tape.constant(p.wv1), tape.constant(p.perm1),
            tape.constant(p.wo1), tape.constant(p.wu1), tape.constant(p.wq2), tape.constant(p.wk2),
            tape.constant(p.wv2), tape.constant(p.perm2), tape.constant(p.wo2), tape.constant(p.wu2),
            tape.constant(p.a)};
}

TwoLayerVitOutput two_layer_vit_forward(Var x, const TwoLayerVitVars& p, int h, Var delta) {
    if (h != 1 && h != 2) throw std::invalid_argument("two_layer_vit_forward: prompt layer must be 1 or 2, got " +
                                                      std::to_string(h));
    const bool batched = x.value().rank() == 3;
    if (delta.valid() && h == 1) x = add(x, delta);

    auto layer = [](Var tokens, Var wq, Var wk, Var wv, Var perm, Var wo, Var wu) {
        AttentionOutput att = attend(tokens, matmul(tokens, perm), wq, wk, wv, 1.0);
        return std::pair{matmul(wu, relu(matmul(wo, att.out))), att.attn};
    };

    auto [z, attn1] = layer(x, p.wq1, p.wk1, p.wv1, p.perm1, p.wo1, p.wu1);
    if (delta.valid() && h == 2) z = add(z, delta);
    auto [r, attn2] = layer(z, p.wq2, p.wk2, p.wv2, p.perm2, p.wo2, p.wu2);

    const std::size_t m = p.a.shape()[0];
    Var per_token = matmul(reshape(p.a, Shape{1, m}), r);
    Var score;
    if (batched) {
        const Shape& s = per_token.shape();
        score = sum(reshape(per_token, Shape{s[0], s[2]}), 1);
    } else {
        score = sum_all(per_token);
    }
    return {score, attn1, attn2, z};
}

}  // namespace aplab::nn
