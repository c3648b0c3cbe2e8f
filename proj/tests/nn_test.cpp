#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aplab/gradcheck.hpp"
#include "aplab/nn.hpp"

using namespace aplab;
using namespace aplab::nn;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

Var project(Var v, const Tensor& weights) { return sum_all(mul(v, v.tape().constant(weights))); }

}  // namespace

TEST(ConvBnRelu, UnitScaledOneByOneIsReluIdentity) {
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({3, 2, 4, 4}, rng);
    Tape tape;
    Var xv = tape.constant(x);
    Tensor w(Shape{2, 2, 1, 1}, {1, 0, 0, 1});
    // gamma = sigma, beta = mu of this batch, so BN is the identity on it.
    Var flat = reshape(permute(xv, {1, 0, 2, 3}), Shape{2, 48});
    const Tensor mu = mean(flat, 1).value();
    Tensor sd = var(flat, 1).value();
    for (auto& v : sd.data) v = std::sqrt(v + kNormEps);
    BatchNormState st;
    Var out = conv_bn_relu_block(xv, tape.constant(w), tape.constant(sd), tape.constant(mu), st, true);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out.value()[i], std::max(x[i], 0.0), 1e-12);
}

TEST(ConvBnRelu, ZeroInputWithUnitShiftGivesOnes) {
    Tape tape;
    BatchNormState st;
    Var pre = batchnorm(conv2d(tape.constant(Tensor(Shape{2, 3, 4, 4})), tape.constant(Tensor(Shape{3, 3, 3, 3}, 0.5)),
                               Padding::circular),
                        tape.constant(Tensor::ones({3})), tape.constant(Tensor::ones({3})), st, true);
    for (double v : pre.value().data) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(st.degenerate_channels, 3u);
}

TEST(ConvBnRelu, GradientThroughBlock) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({2, 2, 4, 4}, rng);
        Tensor w = random_tensor({2, 2, 3, 3}, rng);
        Tensor g = random_tensor({2}, rng, 0.5, 1.5);
        Tensor b = random_tensor({2}, rng);
        Tensor proj = random_tensor({2, 2, 4, 4}, rng);
        auto res = gradcheck(
            [&](Tape&, const std::vector<Var>& in) {
                BatchNormState st;
                return project(conv_bn_relu_block(in[0], in[1], in[2], in[3], st, true), proj);
            },
            {x, w, g, b});
        if (res.kink_margin < 1e-4) continue;
        EXPECT_LT(res.max_rel_error, 1e-6);
    }
}

TEST(BatchNorm, TrainModeStandardizesChannels) {
    std::mt19937_64 rng(3);
    Tape tape;
    BatchNormState st;
    Var y = batchnorm(tape.constant(random_tensor({4, 3, 5, 5}, rng, -3, 7)), tape.constant(Tensor::ones({3})),
                      tape.constant(Tensor::zeros({3})), st, true);
    Var flat = reshape(permute(y, {1, 0, 2, 3}), Shape{3, 100});
    for (double m : mean(flat, 1).value().data) EXPECT_LT(std::abs(m), 1e-9);
    for (double v : var(flat, 1).value().data) EXPECT_NEAR(v, 1.0, 1e-6);
}

TEST(BatchNorm, RunningStatsUseMomentumAndEvalUsesThem) {
    Tape tape;
    BatchNormState st;
    Tensor x(Shape{2, 1, 1, 2}, {1, 3, 5, 7});  // mean 4, population var 5
    batchnorm(tape.constant(x), tape.constant(Tensor::ones({1})), tape.constant(Tensor::zeros({1})), st, true);
    EXPECT_DOUBLE_EQ(st.running_mean[0], 0.4);
    EXPECT_DOUBLE_EQ(st.running_var[0], 0.9 + 0.5);
    Var e = batchnorm(tape.constant(x), tape.constant(Tensor::ones({1})), tape.constant(Tensor::zeros({1})), st, false);
    EXPECT_NEAR(e.value()[0], (1 - 0.4) / std::sqrt(1.4 + kNormEps), 1e-15);
}

TEST(LayerNorm, ConstantTokenGivesBeta) {
    Tape tape;
    Tensor z(Shape{4, 2}, 2.5);
    Tensor beta = Tensor::vector({1, -2, 3, 0.5});
    Var y = layernorm(tape.constant(z), tape.constant(Tensor::vector({2, 2, 2, 2})), tape.constant(beta));
    for (std::size_t dd = 0; dd < 4; ++dd) {
        for (std::size_t p = 0; p < 2; ++p) EXPECT_EQ(y.value().at({dd, p}), beta[dd]);
    }
}

TEST(LayerNorm, StandardizedTokenIsFixedPoint) {
    // Token (-1, 1, -1, 1) has mean 0 and population variance 1.
    Tape tape;
    Tensor z(Shape{4, 1}, {-1, 1, -1, 1});
    Var y = layernorm(tape.constant(z), tape.constant(Tensor::ones({4})), tape.constant(Tensor::zeros({4})), 0.0);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.value()[i], z[i], 1e-12);
}

TEST(LayerNorm, GradientOnThreeTokens) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor z = random_tensor({1, 4, 3}, rng);
        Tensor g = random_tensor({4}, rng);
        Tensor b = random_tensor({4}, rng);
        Tensor proj = random_tensor({1, 4, 3}, rng);
        auto res = gradcheck(
            [&](Tape&, const std::vector<Var>& in) { return project(layernorm(in[0], in[1], in[2]), proj); },
            {z, g, b});
        EXPECT_LT(res.max_rel_error, 1e-6);
    }
}

TEST(Attention, ZeroQueryKeyIsUniform) {
    std::mt19937_64 rng(5);
    Tape tape;
    Var zero = tape.constant(Tensor(Shape{3, 3}));
    auto out = attention_block(tape.constant(random_tensor({3, 5}, rng)), zero, zero,
                               tape.constant(Tensor::identity(3)));
    for (double v : out.attn.value().data) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Attention, SingleTokenAttendsToItself) {
    std::mt19937_64 rng(6);
    Tape tape;
    auto out = attention_block(tape.constant(random_tensor({3, 1}, rng)), tape.constant(random_tensor({3, 3}, rng)),
                               tape.constant(random_tensor({3, 3}, rng)), tape.constant(random_tensor({3, 3}, rng)));
    EXPECT_EQ(out.attn.shape(), (Shape{1, 1}));
    EXPECT_EQ(out.attn.value()[0], 1.0);
}

TEST(Attention, ColumnsAreStochastic) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tape;
        auto out = attention_block(tape.constant(random_tensor({2, 4, 6}, rng, -3, 3)),
                                   tape.constant(random_tensor({4, 4}, rng)), tape.constant(random_tensor({4, 4}, rng)),
                                   tape.constant(random_tensor({4, 4}, rng)));
        const Tensor& a = out.attn.value();
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t k = 0; k < 6; ++k) {
                double s = 0.0;
                for (std::size_t j = 0; j < 6; ++j) s += a.at({b, j, k});
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(Attention, OutputColumnIsWeightedValueSum) {
    std::mt19937_64 rng(8);
    Tape tape;
    Tensor z = random_tensor({3, 4}, rng);
    Tensor wv = random_tensor({2, 3}, rng);
    auto out = attention_block(tape.constant(z), tape.constant(random_tensor({3, 3}, rng)),
                               tape.constant(random_tensor({3, 3}, rng)), tape.constant(wv));
    const Tensor& a = out.attn.value();
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t r = 0; r < 2; ++r) {
            double expect = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                double vz = 0.0;
                for (std::size_t c = 0; c < 3; ++c) vz += wv.at({r, c}) * z.at({c, j});
                expect += vz * a.at({j, k});
            }
            EXPECT_NEAR(out.out.value().at({r, k}), expect, 1e-12);
        }
    }
}

TEST(Conv2d, CircularConstantShiftIsLinear) {
    std::mt19937_64 rng(9);
    Tensor z = random_tensor({2, 3, 5, 5}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    Tensor shift = Tensor::vector({0.7, -1.3, 2.1});
    Tensor zs = z;
    for (std::size_t i = 0; i < zs.size(); ++i) zs.data[i] += shift[(i / 25) % 3];
    Tape tape;
    const Tensor base = conv2d(tape.constant(z), tape.constant(w), Padding::circular).value();
    const Tensor shifted = conv2d(tape.constant(zs), tape.constant(w), Padding::circular).value();
    for (std::size_t i = 0; i < base.size(); ++i) {
        const std::size_t o = (i / 25) % 4;
        double ws = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t t = 0; t < 9; ++t) ws += w.data[(o * 3 + c) * 9 + t] * shift[c];
        }
        EXPECT_NEAR(shifted[i], base[i] + ws, 1e-12);
    }
}

class ToyModels : public ::testing::TestWithParam<Arch> {
protected:
    LayeredModel make() const {
        if (GetParam() == Arch::cnn) return build_toy_cnn({.in_channels = 3}, 11);
        return build_toy_vit({.in_channels = 3, .tokens = 16, .patch = 2, .width = 8, .mlp_hidden = 16}, 11);
    }
    Shape input_shape() const { return {3, 8, 8}; }
};

TEST_P(ToyModels, HasSixSitesInOrder) {
    LayeredModel m = make();
    EXPECT_EQ(m.site_names(), (std::vector<std::string>{"site_0", "site_1", "site_2", "site_3", "site_4", "site_5"}));
    EXPECT_EQ(m.site_index("site_3"), 3u);
    EXPECT_THROW(m.site_index("site_6"), std::invalid_argument);
    EXPECT_THROW(m.site_index("block"), std::invalid_argument);
}

TEST_P(ToyModels, ZeroPromptIsBitwiseNoOpAtEverySite) {
    LayeredModel m = make();
    std::mt19937_64 rng(12);
    Tensor x = random_tensor({4, 3, 8, 8}, rng);
    const auto shapes = site_shapes(m, input_shape());
    Tape t0;
    const Tensor plain = forward(m, t0, t0.constant(x)).logits.value();
    for (std::size_t s = 0; s < m.num_sites(); ++s) {
        Tape t;
        ForwardOptions o;
        o.prompt = Prompt{s, t.constant(Tensor(shapes[s]))};
        EXPECT_TRUE(bitwise_equal(forward(m, t, t.constant(x), o).logits.value().data, plain.data)) << site_name(s);
    }
}

TEST_P(ToyModels, SiteZeroPromptEqualsInputAddition) {
    LayeredModel m = make();
    std::mt19937_64 rng(13);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor delta = random_tensor({3, 8, 8}, rng);
    Tensor xd = x;
    for (std::size_t i = 0; i < xd.size(); ++i) xd.data[i] += delta[i % delta.size()];
    Tape t1, t2;
    ForwardOptions o;
    o.prompt = Prompt{0, t1.constant(delta)};
    EXPECT_TRUE(bitwise_equal(forward(m, t1, t1.constant(x), o).logits.value().data,
                              forward(m, t2, t2.constant(xd)).logits.value().data));
}

TEST_P(ToyModels, DeepPromptDoesNotReachEarlierBlocks) {
    LayeredModel m = make();
    m.set_requires_grad(false);
    m.blocks.back().params.at("w").requires_grad = true;
    std::mt19937_64 rng(14);
    const auto shapes = site_shapes(m, input_shape());
    Tensor delta(shapes[3]);
    delta.requires_grad = true;
    Tape t;
    ForwardOptions o;
    o.prompt = Prompt{3, t.leaf(delta)};
    ForwardResult r = forward(m, t, t.constant(random_tensor({2, 3, 8, 8}, rng)), o);
    std::vector<int> labels{0, 1};
    t.backward(cross_entropy(r.logits, labels));
    ASSERT_TRUE(delta.grad.has_value());
    EXPECT_FALSE(t.has_grad(r.activations[2]));
    EXPECT_TRUE(t.has_grad(r.activations[3]));
    for (std::size_t b = 0; b + 1 < m.blocks.size(); ++b) {
        for (const auto& [name, p] : m.blocks[b].params) EXPECT_FALSE(p.grad.has_value()) << m.blocks[b].name << name;
    }
}

TEST_P(ToyModels, SaveLoadRoundTripIsByteStable) {
    LayeredModel m = make();
    const std::string a = save_params_json(m);
    LayeredModel back = load_params_json(a);
    EXPECT_EQ(save_params_json(back), a);
    EXPECT_EQ(save_params_json(make()), a);
    std::mt19937_64 rng(15);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tape t1, t2;
    EXPECT_TRUE(bitwise_equal(forward(m, t1, t1.constant(x)).logits.value().data,
                              forward(back, t2, t2.constant(x)).logits.value().data));
}

TEST_P(ToyModels, EvalForwardIsDeterministic) {
    LayeredModel m = make();
    std::mt19937_64 rng(16);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tape t1, t2;
    EXPECT_TRUE(bitwise_equal(forward(m, t1, t1.constant(x)).logits.value().data,
                              forward(m, t2, t2.constant(x)).logits.value().data));
}

INSTANTIATE_TEST_SUITE_P(Arch, ToyModels, ::testing::Values(Arch::cnn, Arch::vit),
                         [](const auto& info) { return to_string(info.param); });

TEST(ToyVit, AttentionIsRecordedPerBlockAndStochastic) {
    LayeredModel m = build_toy_vit({.in_channels = 4, .tokens = 8, .width = 8, .mlp_hidden = 16}, 3);
    std::mt19937_64 rng(17);
    Tape t;
    ForwardResult r = forward(m, t, t.constant(random_tensor({3, 4, 8}, rng, -2, 2)));
    ASSERT_EQ(r.attention.size(), 4u);
    for (const Var& a : r.attention) {
        ASSERT_EQ(a.shape(), (Shape{3, 8, 8}));
        for (std::size_t b = 0; b < 3; ++b) {
            for (std::size_t k = 0; k < 8; ++k) {
                double s = 0.0;
                for (std::size_t j = 0; j < 8; ++j) s += a.value().at({b, j, k});
                EXPECT_NEAR(s, 1.0, 1e-12);
            }
        }
    }
}

TEST(ToyVit, InjectAfterNormDiffersFromBlockInput) {
    ToyVitConfig cfg{.in_channels = 4, .tokens = 8, .width = 8, .mlp_hidden = 16};
    LayeredModel before = build_toy_vit(cfg, 3);
    cfg.inject_after_norm = true;
    LayeredModel after = build_toy_vit(cfg, 3);
    std::mt19937_64 rng(18);
    Tensor x = random_tensor({2, 4, 8}, rng);
    Tensor delta = random_tensor({8, 8}, rng);
    Tape t1, t2;
    ForwardOptions o1, o2;
    o1.prompt = Prompt{2, t1.constant(delta)};
    o2.prompt = Prompt{2, t2.constant(delta)};
    const Tensor a = forward(before, t1, t1.constant(x), o1).logits.value();
    const Tensor b = forward(after, t2, t2.constant(x), o2).logits.value();
    EXPECT_GT(max_abs_diff(a.data, b.data), 1e-6);
}

TEST(ToyModelsCounts, ParameterCountsMatchArchitecture) {
    LayeredModel cnn = build_toy_cnn({.in_channels = 3}, 1);
    // stem 8*3+8, blocks 4*(8*8*9 + 16), head 2*8+2
    EXPECT_EQ(cnn.param_count(), 32u + 4u * (576u + 16u) + 18u);
    EXPECT_EQ(cnn.norm_width_total(), 32u);
    EXPECT_EQ(cnn.norm_layer_count(), 4u);
    LayeredModel vit = build_toy_vit({.in_channels = 4, .tokens = 8, .width = 8, .mlp_hidden = 16}, 1);
    EXPECT_EQ(vit.norm_width_total(), 4u * 2u * 8u);
    EXPECT_EQ(vit.norm_layer_count(), 8u);
}

TEST(TwoLayerVit, ZeroPromptAtEitherLayerMatchesUnprompted) {
    std::mt19937_64 rng(19);
    const std::size_t d = 4, m = 8, p = 5;
    TwoLayerVitParams prm;
    prm.wq1 = random_tensor({d, d}, rng);
    prm.wk1 = random_tensor({d, d}, rng);
    prm.wv1 = random_tensor({d, d}, rng);
    prm.perm1 = Tensor::identity(p);
    prm.wo1 = random_tensor({m, d}, rng);
    prm.wu1 = Tensor::identity(m);
    prm.wq2 = random_tensor({m, m}, rng);
    prm.wk2 = random_tensor({m, m}, rng);
    prm.wv2 = random_tensor({m, m}, rng);
    prm.perm2 = Tensor::identity(p);
    prm.wo2 = random_tensor({m, m}, rng);
    prm.wu2 = Tensor::identity(m);
    prm.a = random_tensor({m}, rng);
    Tensor x = random_tensor({d, p}, rng);
    Tape t;
    auto vars = bind_constants(t, prm);
    Var xv = t.constant(x);
    const auto plain = two_layer_vit_forward(xv, vars, 1, Var{});
    const auto h1 = two_layer_vit_forward(xv, vars, 1, t.constant(Tensor(Shape{d, p})));
    const auto h2 = two_layer_vit_forward(xv, vars, 2, t.constant(Tensor(Shape{m, p})));
    EXPECT_EQ(plain.score.item(), h1.score.item());
    EXPECT_EQ(plain.score.item(), h2.score.item());
    EXPECT_THROW(two_layer_vit_forward(xv, vars, 3, Var{}), std::invalid_argument);
    for (std::size_t k = 0; k < p; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) s += plain.attn2.value().at({j, k});
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}
