#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "aplab/gradcheck.hpp"
#include "aplab/theory.hpp"

using namespace aplab;
using namespace aplab::theory;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Noiseless sample: `first` at position pos, `background` everywhere else.
Tensor placed(const PatternBasis& b, std::size_t p, std::size_t pos, std::size_t first, std::size_t background) {
    const std::size_t d = b.v.shape[1];
    Tensor x(Shape{d, p});
    for (std::size_t t = 0; t < p; ++t) {
        const auto v = b.pattern(t == pos ? first : background);
        for (std::size_t i = 0; i < d; ++i) x.data[i * p + t] = v[i];
    }
    return x;
}

double score_of(const ConstructedViT& m, const Tensor& x) {
    Tape tape;
    auto vars = nn::bind_constants(tape, m.params);
    return nn::two_layer_vit_forward(tape.constant(x), vars, 1, Var{}).score.value().data[0];
}

}  // namespace

TEST(PatternBasis, GramMatrixOverManySeeds) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const PatternBasis b = gen_pattern_basis(4 + seed % 3, -0.5, seed);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 4; ++j) {
                double expect = i == j ? 1.0 : 0.0;
                if ((i == 2 && j == 3) || (i == 3 && j == 2)) expect = -0.5;
                EXPECT_NEAR(dot(b.pattern(i), b.pattern(j)), expect, 1e-12) << "seed " << seed;
            }
        }
    }
}

TEST(PatternBasis, RejectsBadArguments) {
    EXPECT_THROW(gen_pattern_basis(3, -0.5, 0), std::invalid_argument);
    EXPECT_THROW(gen_pattern_basis(4, 0.0, 0), std::invalid_argument);
    EXPECT_THROW(gen_pattern_basis(4, -1.0, 0), std::invalid_argument);
}

TEST(GenSample, NoiselessHasOneLabelTokenAndBackground) {
    SyntheticTaskSpec spec;
    spec.sigma = 0.0;
    const PatternBasis b = gen_pattern_basis(4, -0.5, 3);
    std::mt19937_64 rng(1);
    for (int y : {1, -1}) {
        for (int rep = 0; rep < 20; ++rep) {
            std::size_t pos = 0;
            const Tensor x = gen_sample(spec, b, y, rng, &pos);
            std::size_t label_tokens = 0;
            for (std::size_t t = 0; t < spec.P; ++t) {
                std::vector<double> col(4);
                for (std::size_t i = 0; i < 4; ++i) col[i] = x.data[i * spec.P + t];
                auto equals = [&](std::size_t k) { return max_abs_diff(col, b.pattern(k)) == 0.0; };
                if (equals(y == 1 ? 0 : 1)) {
                    ++label_tokens;
                    EXPECT_EQ(t, pos);
                } else {
                    EXPECT_TRUE(equals(2) || equals(3));
                }
            }
            EXPECT_EQ(label_tokens, 1u);
        }
    }
    EXPECT_THROW(gen_sample(spec, b, 0, rng), std::invalid_argument);
}

TEST(GenSample, LabelPositionIsUniform) {
    SyntheticTaskSpec spec;
    const PatternBasis b = gen_pattern_basis(4, -0.5, 3);
    std::mt19937_64 rng(2);
    std::vector<double> counts(spec.P, 0.0);
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t pos = 0;
        gen_sample(spec, b, i % 2 ? 1 : -1, rng, &pos);
        counts[pos] += 1.0;
    }
    const double expect = static_cast<double>(n) / static_cast<double>(spec.P);
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // 7 degrees of freedom; 0.999 quantile is about 24.3.
    EXPECT_LT(chi2, 24.3);
}

TEST(GenSample, NoiseStdMatchesSpec) {
    SyntheticTaskSpec spec;
    spec.P = 8;
    const PatternBasis b = gen_pattern_basis(4, -0.5, 5);
    SyntheticTaskSpec clean = spec;
    clean.sigma = 0.0;
    std::mt19937_64 rng(9);
    double ss = 0.0;
    std::size_t count = 0;
    while (count < 100000) {
        // Same rng stream for positions and coins: noise is the only difference.
        std::mt19937_64 a(rng()), c = a;
        const Tensor noisy = gen_sample(spec, b, 1, a);
        const Tensor base = gen_sample(clean, b, 1, c);
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            const double e = noisy.data[i] - base.data[i];
            ss += e * e;
        }
        count += noisy.size();
    }
    const double sd = std::sqrt(ss / static_cast<double>(count));
    EXPECT_NEAR(sd, spec.noise(), 0.05 * spec.noise());
    EXPECT_DOUBLE_EQ(spec.noise(), 0.5 / 8.0);
}

TEST(SyntheticTaskSpec, Validation) {
    SyntheticTaskSpec s;
    s.d_A = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s.d_A = s.P;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s.d_A = 1;
    s.zeta = 0.2;
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(ConstructedVit, WeightLayout) {
    SyntheticTaskSpec spec;
    spec.d_A = 2;
    const PatternBasis b = gen_pattern_basis(4, -0.5, 1);
    const ConstructedViT m = build_constructed_vit(spec, b, 16, 1.5);
    const auto& w = m.params;
    // Key/query product is beta^2 times the identity; the shift lives in the token permutation.
    Tape tape;
    const Tensor kq = matmul(transpose(tape.constant(w.wk1)), tape.constant(w.wq1)).value();
    Tensor expect = Tensor::identity(4);
    for (auto& v : expect.data) v *= 1.5 * 1.5;
    EXPECT_TRUE(bitwise_equal(kq.data, expect.data));
    EXPECT_TRUE(bitwise_equal(w.perm1.data, cyclic_shift(spec.P, 2).data));
    EXPECT_TRUE(bitwise_equal(w.perm2.data, cyclic_shift(spec.P, 1).data));
    for (std::size_t r = 0; r < 16; ++r) {
        std::vector<double> row(w.wo1.data.begin() + static_cast<long>(r * 4), w.wo1.data.begin() + static_cast<long>(r * 4 + 4));
        EXPECT_EQ(row, b.pattern(r / 4));
        const double a = w.a.data[r];
        EXPECT_DOUBLE_EQ(std::abs(a), 1.0 / (16.0 * 8.0));
        EXPECT_EQ(a > 0, (r / 4) % 2 == 0);
    }
    EXPECT_THROW(build_constructed_vit(spec, b, 10), std::invalid_argument);
}

TEST(ConstructedVit, CyclicShiftMovesTokens) {
    // (X * S)[:, k] = X[:, k + s mod P]
    Tensor x(Shape{1, 5});
    for (std::size_t i = 0; i < 5; ++i) x.data[i] = static_cast<double>(i);
    Tape tape;
    const Tensor y = matmul(tape.constant(x), tape.constant(cyclic_shift(5, 2))).value();
    EXPECT_EQ(y.data, (std::vector<double>{2, 3, 4, 0, 1}));
}

TEST(ConstructedVit, UnpromptedSignsOnNoiselessSamples) {
    SyntheticTaskSpec spec;
    const PatternBasis b = gen_pattern_basis(4, -0.5, 4);
    const ConstructedViT m = build_constructed_vit(spec, b);
    EXPECT_GT(score_of(m, placed(b, spec.P, 3, 0, 2)), 0.0);
    EXPECT_LT(score_of(m, placed(b, spec.P, 3, 1, 3)), 0.0);
    // Without a prompt the background decides: seven v3 tokens outweigh one v2.
    EXPECT_GT(score_of(m, placed(b, spec.P, 3, 1, 2)), 0.0);
}

TEST(HingeLoss, Values) {
    EXPECT_DOUBLE_EQ(hinge_loss(1.0 / 8.0, 1, 8), 0.0);
    EXPECT_DOUBLE_EQ(hinge_loss(0.0, 1, 8), 0.125);
    EXPECT_DOUBLE_EQ(hinge_loss(0.5, -1, 4), 0.75);
}

TEST(HingeLoss, GradientAwayFromKink) {
    Tensor s(Shape{}, 0.03);
    auto r = gradcheck([](Tape&, const std::vector<Var>& v) { return hinge_loss(v[0], -1, 8); }, {s});
    EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(ConstructedAttention, DistancesForAllShiftsAndLengths) {
    for (std::size_t p : {8, 16, 32}) {
        for (std::size_t da : {1, 2, 3}) {
            SyntheticTaskSpec spec;
            spec.P = p;
            spec.d_A = da;
            const ConstructedViT m = build_constructed_vit(spec, gen_pattern_basis(4, -0.5, p + da));
            const Lemma1Result r = verify_lemma1(m, spec);
            EXPECT_NEAR(r.layer1, (1.0 + static_cast<double>(da)) / static_cast<double>(p), 1e-12);
            EXPECT_NEAR(r.layer2, 1.0 / static_cast<double>(p), 1e-12);
            EXPECT_EQ(r.expected_layer1, (1.0 + static_cast<double>(da)) / static_cast<double>(p));
        }
    }
}

TEST(ConstructedAttention, SmallestIndexTieRuleDoesNotReproduce) {
    SyntheticTaskSpec spec;
    spec.d_A = 3;
    const ConstructedViT m = build_constructed_vit(spec, gen_pattern_basis(4, -0.5, 0));
    Tape tape;
    auto vars = nn::bind_constants(tape, m.params);
    const auto out = nn::two_layer_vit_forward(tape.constant(placed(m.basis, 8, 4, 0, 3)), vars, 1, Var{});
    EXPECT_NE(analysis::avg_attention_distance(out.attn1.value()), 0.5);
}

class TheoryTraining : public ::testing::Test {
protected:
    static TheoryRun run(int h, std::uint64_t seed, std::size_t steps = 2000) {
        SyntheticTaskSpec spec;
        spec.n_train = 512;
        spec.seed = seed;
        const ConstructedViT m = build_constructed_vit(spec, gen_pattern_basis(4, spec.zeta, seed + 100));
        TheoryTrainConfig cfg;
        cfg.learning_rate = 0.5;
        cfg.batch_size = 16;
        cfg.steps = steps;
        cfg.seed = seed;
        return train_theory_prompt(spec, m, h, cfg);
    }
};

TEST_F(TheoryTraining, FirstLayerReachesZeroTestError) {
    const TheoryRun r = run(1, 0);
    EXPECT_FALSE(r.record.diverged);
    EXPECT_EQ(r.record.steps, 2000u);
    EXPECT_EQ(r.record.n_test, 2000u);
    EXPECT_EQ(r.record.final_test_acc, 1.0);
}

TEST_F(TheoryTraining, SecondLayerIsWorseAtSameSampleSize) {
    int worse = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const double e1 = 1.0 - run(1, seed).record.final_test_acc;
        const double e2 = 1.0 - run(2, seed).record.final_test_acc;
        if (e2 > e1) ++worse;
    }
    EXPECT_GE(worse, 4);
}

TEST_F(TheoryTraining, FirstLayerPromptBoostsLabelPatternsAndSuppressesBackground) {
    SyntheticTaskSpec spec;
    const PatternBasis b = gen_pattern_basis(4, spec.zeta, 100);
    const TheoryRun r = run(1, 0);
    // Token-averaged prompt.
    std::vector<double> mean(4, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t t = 0; t < spec.P; ++t) mean[i] += r.delta.data[i * spec.P + t] / static_cast<double>(spec.P);
    }
    EXPECT_GT(dot(b.pattern(0), mean), 0.1);
    EXPECT_GT(dot(b.pattern(1), mean), 0.1);
    EXPECT_LT(dot(b.pattern(2), mean), -0.1);
    EXPECT_LT(dot(b.pattern(3), mean), -0.1);
}

TEST_F(TheoryTraining, PromptNormGrowsWithSteps) {
    auto norm = [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data) s += v * v;
        return std::sqrt(s);
    };
    const double n_short = norm(run(1, 1, 200).delta);
    const double n_long = norm(run(1, 1, 2000).delta);
    EXPECT_GT(n_short, 0.0);
    EXPECT_GT(n_long, n_short);
}

TEST(SampleComplexity, TinySweepIsDeterministicAcrossJobs) {
    SweepConfig cfg;
    cfg.P_list = {8};
    cfg.seeds = 2;
    cfg.log2_n_min = 4;
    cfg.log2_n_max = 7;
    cfg.n_test = 200;
    cfg.protocol = {{8, 1.0, 20000, 4}};
    const auto serial = sample_complexity_sweep(cfg);
    cfg.jobs = 3;
    const auto parallel = sample_complexity_sweep(cfg);
    ASSERT_EQ(serial.size(), 4u);
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_EQ(serial[i].N_star, parallel[i].N_star);
        EXPECT_EQ(serial[i].censored, parallel[i].censored);
        EXPECT_EQ(serial[i].probes, parallel[i].probes);
        EXPECT_EQ(serial[i].delta_norm, parallel[i].delta_norm);
        if (!serial[i].censored) {
            EXPECT_GE(serial[i].test_acc_at_N_star, cfg.target_acc);
            EXPECT_GE(serial[i].N_star, 16u);
            EXPECT_LE(serial[i].N_star, 128u);
        }
    }
}

TEST(SampleComplexity, SummaryCountsCensoredAsInfinite) {
    SweepConfig cfg;
    cfg.P_list = {8};
    cfg.h_list = {2};
    cfg.log2_n_max = 10;
    std::vector<SweepCell> cells(3);
    for (auto& c : cells) {
        c.P = 8;
        c.h = 2;
    }
    cells[0].N_star = 64;
    cells[1].censored = true;
    cells[2].censored = true;
    const auto s = summarize(cells, cfg);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_TRUE(std::isinf(s[0].median_N_star));
    EXPECT_EQ(s[0].censored, 2u);
    cells[2].censored = false;
    cells[2].N_star = 512;
    EXPECT_EQ(summarize(cells, cfg)[0].median_N_star, 512.0);
}

TEST(SampleComplexity, Ratios) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<SweepSummary> s{{8, 1, 64, 0}, {8, 2, 256, 0}, {16, 1, 128, 0}, {16, 2, inf, 5}, {32, 1, inf, 5}, {32, 2, inf, 5}};
    const auto r = sample_ratios(s, {8, 16, 32});
    EXPECT_EQ(r[0], 4.0);
    EXPECT_TRUE(std::isinf(r[1]));
    EXPECT_TRUE(std::isnan(r[2]));
}
