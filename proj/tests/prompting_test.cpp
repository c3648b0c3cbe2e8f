#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aplab/prompting.hpp"

using namespace aplab;
using namespace aplab::prompting;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

nn::LayeredModel small_cnn() { return nn::build_toy_cnn({.in_channels = 3}, 21); }
nn::LayeredModel small_vit() {
    return nn::build_toy_vit({.in_channels = 4, .tokens = 8, .width = 8, .mlp_hidden = 16}, 21);
}

// Label = sign of the mean of channel 0.
Dataset image_task(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset d;
    d.x = random_tensor({n, 3, 6, 6}, rng);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 36; ++k) s += d.x.data[i * 108 + k];
        d.labels.push_back(s > 0 ? 1 : 0);
    }
    return d;
}

}  // namespace

TEST(CountParams, LinearProbeIsHeadOnly) {
    auto cnn = small_cnn();
    EXPECT_EQ(count_params({.method = Method::linear_probe}, cnn, {3, 6, 6}), 8u * 2u + 2u);
}

TEST(CountParams, ApFullAtTokenSite) {
    auto vit = small_vit();
    PromptSpec s{.method = Method::ap, .site = "site_2", .train_head = false};
    EXPECT_EQ(count_params(s, vit, {4, 8}), 8u * 8u);
    s.train_head = true;
    EXPECT_EQ(count_params(s, vit, {4, 8}), 8u * 8u + 18u);
}

TEST(CountParams, VpAdditiveOnThirtyTwoSquareImage) {
    auto cnn = small_cnn();
    EXPECT_EQ(count_params({.method = Method::vp_additive, .train_head = false}, cnn, {3, 32, 32}), 3072u);
}

TEST(CountParams, NormTuneIsTwicePerNormWidth) {
    auto cnn = small_cnn();
    EXPECT_EQ(count_params({.method = Method::norm_tune, .train_head = false}, cnn, {3, 6, 6}), 2u * 4u * 8u);
    EXPECT_EQ(count_params({.method = Method::norm_tune}, cnn, {3, 6, 6}), 2u * 4u * 8u + 18u);
    auto vit = small_vit();
    EXPECT_EQ(count_params({.method = Method::norm_tune, .train_head = false}, vit, {4, 8}), 2u * 8u * 8u);
}

TEST(CountParams, ApSharedSpatialIsChannelCount) {
    auto cnn = small_cnn();
    PromptSpec full{.method = Method::ap, .site = "site_3", .train_head = false};
    PromptSpec shared{.method = Method::ap, .site = "site_3", .shape_mode = ShapeMode::shared_spatial, .train_head = false};
    EXPECT_EQ(count_params(full, cnn, {3, 6, 6}), 8u * 36u);
    EXPECT_EQ(count_params(shared, cnn, {3, 6, 6}), 8u);
    PromptSpec token{.method = Method::ap, .site = "site_3", .shape_mode = ShapeMode::shared_token};
    EXPECT_THROW(count_params(token, cnn, {3, 6, 6}), DimensionError);
    auto vit = small_vit();
    shared.site = "site_2";
    EXPECT_THROW(count_params(shared, vit, {4, 8}), DimensionError);
    token.train_head = false;
    token.site = "site_2";
    EXPECT_EQ(count_params(token, vit, {4, 8}), 8u);
}

TEST(CountParams, OrderingAcrossMethods) {
    auto cnn = small_cnn();
    const Shape in{3, 6, 6};
    const auto lp = count_params({.method = Method::linear_probe}, cnn, in);
    const auto ap_shared = count_params(
        {.method = Method::ap, .site = "site_4", .shape_mode = ShapeMode::shared_spatial}, cnn, in);
    const auto vp = count_params({.method = Method::vp_additive}, cnn, in);
    const auto ap_full = count_params({.method = Method::ap, .site = "site_1"}, cnn, in);
    EXPECT_LT(lp, ap_shared);
    EXPECT_LE(ap_shared, vp);
    EXPECT_LT(ap_full, cnn.param_count());
    EXPECT_LT(vp, cnn.param_count());
}

TEST(PromptSpec, VisualPromptsMustUseSiteZero) {
    auto cnn = small_cnn();
    EXPECT_THROW(build_adaptation(cnn, {.method = Method::vp_additive, .site = "site_2"}, {3, 6, 6}),
                 std::invalid_argument);
    EXPECT_THROW(build_adaptation(cnn, {.method = Method::ap, .site = "site_9"}, {3, 6, 6}), std::invalid_argument);
}

TEST(ResizeConcat, ZeroBorderIsPureResize) {
    std::mt19937_64 rng(1);
    Tape t;
    Var x = t.constant(random_tensor({2, 3, 4, 4}, rng));
    Var y = resize_concat_template(x, Var{}, 6, 6, 6, 6);
    EXPECT_TRUE(bitwise_equal(y.value().data, resize_bilinear(x, 6, 6).value().data));
}

TEST(ResizeConcat, FourIntoSixHasTwentyBorderPixels) {
    auto cnn = small_cnn();
    PromptSpec s{.method = Method::vp_resize_concat, .train_head = false, .inner_h = 4, .inner_w = 4};
    Adaptation a = build_adaptation(cnn, s, {3, 6, 6});
    EXPECT_EQ(a.delta().shape, (Shape{3, 20}));
    EXPECT_EQ(a.param_count(), 60u);

    std::mt19937_64 rng(2);
    Tape t;
    Tensor x = random_tensor({1, 3, 4, 4}, rng);
    Tensor d = random_tensor({3, 20}, rng);
    Var y = resize_concat_template(t.constant(x), t.constant(d), 4, 4, 6, 6);
    EXPECT_EQ(y.value().at({0, 1, 2, 3}), x.at({0, 1, 1, 2}));
    EXPECT_EQ(y.value().at({0, 2, 0, 0}), d.at({2, 0}));
    EXPECT_THROW(resize_concat_template(t.constant(x), t.constant(Tensor(Shape{3, 19})), 4, 4, 6, 6), DimensionError);
}

TEST(ResizeConcat, GradientReachesOnlyThePrompt) {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor d = random_tensor({3, 16}, rng);
    d.requires_grad = true;
    Tape t;
    Var xv = t.constant(x);
    Var y = resize_concat_template(xv, t.leaf(d), 3, 3, 5, 5);
    t.backward(sum_all(mul(y, y)));
    ASSERT_TRUE(d.grad.has_value());
    EXPECT_FALSE(t.has_grad(xv));
    EXPECT_FALSE(x.grad.has_value());
}

TEST(Optimizers, SgdStepOnSquare) {
    Tensor p = Tensor::scalar(1.0);
    p.grad = std::vector<double>{2.0};
    std::vector<NamedParam> ps{{"p", &p}};
    sgd_step(ps, 0.1);
    EXPECT_DOUBLE_EQ(p.item(), 0.8);
}

TEST(Optimizers, AdamFirstStepIsLearningRateSized) {
    for (double scale : {1e-4, 1.0, 1e6}) {
        Tensor p = Tensor::scalar(0.0);
        p.grad = std::vector<double>{scale};
        std::vector<NamedParam> ps{{"p", &p}};
        AdamState st;
        adam_step(ps, st, 0.01);
        EXPECT_NEAR(p.item(), -0.01, 1e-5) << scale;
    }
}

TEST(Optimizers, AdamSolvesQuadratic) {
    Tensor p = Tensor::scalar(1.0);
    std::vector<NamedParam> ps{{"p", &p}};
    AdamState st;
    int steps = 0;
    while (std::abs(p.item()) >= 1e-3 && steps < 500) {
        p.grad = std::vector<double>{2.0 * p.item()};
        adam_step(ps, st, 0.05);
        ++steps;
    }
    EXPECT_LT(std::abs(p.item()), 1e-3);
    EXPECT_LE(steps, 500);
}

TEST(Train, ZeroLearningRateKeepsParamsAndAccuracy) {
    auto cnn = small_cnn();
    Dataset tr = image_task(40, 5), te = image_task(40, 6);
    for (Method m : {Method::ap, Method::norm_tune, Method::linear_probe}) {
        Adaptation a = build_adaptation(cnn, {.method = m, .site = "site_2"}, {3, 6, 6});
        const std::string before = nn::save_params_json(a.model());
        const Tensor d0 = a.delta();
        RunRecord r = train(a, tr, te, {.optimizer = Optimizer::adam, .learning_rate = 0.0, .epochs = 2, .batch_size = 8});
        EXPECT_EQ(nn::save_params_json(a.model()), before);
        EXPECT_TRUE(bitwise_equal(a.delta().data, d0.data));
        EXPECT_EQ(r.final_test_acc, r.initial_test_acc);
        EXPECT_EQ(r.steps, 10u);
    }
}

TEST(Train, SameSeedGivesBitwiseSameTrajectory) {
    auto vit = small_vit();
    std::mt19937_64 rng(7);
    Dataset tr;
    tr.x = random_tensor({32, 4, 8}, rng);
    for (std::size_t i = 0; i < 32; ++i) tr.labels.push_back(tr.x.data[i * 32] > 0 ? 1 : 0);
    TrainConfig cfg{.learning_rate = 0.01, .epochs = 3, .batch_size = 8, .seed = 99};
    Adaptation a = build_adaptation(vit, {.method = Method::ap, .site = "site_1"}, {4, 8});
    Adaptation b = build_adaptation(vit, {.method = Method::ap, .site = "site_1"}, {4, 8});
    RunRecord ra = train(a, tr, tr, cfg);
    RunRecord rb = train(b, tr, tr, cfg);
    EXPECT_TRUE(bitwise_equal(ra.losses, rb.losses));
    EXPECT_TRUE(bitwise_equal(a.delta().data, b.delta().data));
}

TEST(Train, SiteZeroPromptMatchesVisualPrompt) {
    auto cnn = small_cnn();
    Dataset tr = image_task(48, 8), te = image_task(16, 9);
    for (Optimizer opt : {Optimizer::sgd, Optimizer::adam}) {
        TrainConfig cfg{.optimizer = opt, .learning_rate = 0.05, .epochs = 3, .batch_size = 16, .seed = 4};
        Adaptation vp = build_adaptation(cnn, {.method = Method::vp_additive}, {3, 6, 6});
        Adaptation ap = build_adaptation(cnn, {.method = Method::ap, .site = "site_0"}, {3, 6, 6});
        RunRecord rv = train(vp, tr, te, cfg);
        RunRecord ra = train(ap, tr, te, cfg);
        ASSERT_EQ(rv.losses.size(), ra.losses.size());
        EXPECT_LT(max_abs_diff(rv.losses, ra.losses), 1e-12);
    }
}

TEST(Train, FrozenParametersAreBitwiseUnchanged) {
    auto cnn = small_cnn();
    Dataset tr = image_task(32, 10);
    for (Method m : {Method::vp_additive, Method::ap, Method::norm_tune, Method::linear_probe}) {
        Adaptation a = build_adaptation(cnn, {.method = m, .site = m == Method::ap ? "site_3" : "site_0"}, {3, 6, 6});
        train(a, tr, tr, {.learning_rate = 0.05, .epochs = 2, .batch_size = 8});
        for (std::size_t b = 0; b < cnn.blocks.size(); ++b) {
            for (const auto& [name, t] : cnn.blocks[b].params) {
                const Tensor& after = a.model().blocks[b].params.at(name);
                if (after.requires_grad) continue;
                EXPECT_TRUE(bitwise_equal(after.data, t.data)) << to_string(m) << " " << name;
            }
        }
    }
}

TEST(Train, FitsTrainingData) {
    auto cnn = small_cnn();
    Dataset tr = image_task(128, 11), te = image_task(128, 12);
    Adaptation a = build_adaptation(cnn, {.method = Method::ap, .site = "site_1"}, {3, 6, 6});
    RunRecord r = train(a, tr, te, {.learning_rate = 0.1, .epochs = 15, .batch_size = 16, .seed = 3});
    EXPECT_FALSE(r.diverged);
    EXPECT_LT(r.losses.back(), 0.5 * r.losses.front());
    EXPECT_GT(r.final_train_acc, 0.9);
}

TEST(Train, DivergenceIsFlaggedNotThrown) {
    auto cnn = small_cnn();
    Dataset tr = image_task(16, 13);
    Adaptation a = build_adaptation(cnn, {.method = Method::linear_probe}, {3, 6, 6});
    RunRecord r = train(a, tr, tr, {.optimizer = Optimizer::sgd, .learning_rate = 1e12, .epochs = 20, .batch_size = 4});
    EXPECT_TRUE(r.diverged);
    for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
}

TEST(Train, HingeLossOnScores) {
    Tape t;
    Var s = t.constant(Tensor::vector({0.125, 0.0}));
    std::vector<int> y{1, 1};
    // (0 + 0.125) / 2
    EXPECT_DOUBLE_EQ(batch_loss(s, y, {.kind = LossKind::hinge, .margin = 0.125}).item(), 0.0625);
}

TEST(Accuracy, HeadScalingKeepsPredictions) {
    auto cnn = small_cnn();
    Dataset te = image_task(64, 14);
    Adaptation a = build_adaptation(cnn, {.method = Method::linear_probe}, {3, 6, 6});
    const double base = accuracy(a, te, {});
    for (double c : {0.01, 3.0, 1e4}) {
        Adaptation scaled = a;
        for (auto& [_, t] : scaled.model().blocks.back().params) {
            for (auto& v : t.data) v *= c;
        }
        EXPECT_EQ(accuracy(scaled, te, {}), base);
    }
}
