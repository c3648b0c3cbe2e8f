#include <gtest/gtest.h>

#include <cmath>

#include "aplab/experiments.hpp"

using namespace aplab;
using namespace aplab::experiments;

TEST(GradcheckSuite, EveryOpPassesAndControlFails) {
    GradcheckSuiteConfig cfg;
    cfg.instances = 10;
    cfg.negative_control = true;
    const auto rows = gradcheck_suite(cfg);
    ASSERT_EQ(rows.size(), gradcheck_op_names().size() + 1);
    for (const auto& r : rows) {
        if (r.name == "corrupted_square") {
            EXPECT_FALSE(r.pass());
            EXPECT_GT(r.worst_rel_error, 1e-2);
        } else {
            EXPECT_TRUE(r.pass()) << r.name << " " << r.worst_rel_error;
            EXPECT_EQ(r.instances, 10u) << r.name;
        }
    }
}

TEST(GradcheckSuite, JobsDoNotChangeResults) {
    GradcheckSuiteConfig a;
    a.instances = 4;
    GradcheckSuiteConfig b = a;
    b.jobs = 3;
    const auto ra = gradcheck_suite(a), rb = gradcheck_suite(b);
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        EXPECT_EQ(ra[i].name, rb[i].name);
        EXPECT_EQ(ra[i].worst_rel_error, rb[i].worst_rel_error) << ra[i].name;
        EXPECT_EQ(ra[i].rejected, rb[i].rejected);
    }
}

TEST(ParamCounts, TableMatchesClosedForms) {
    const auto rows = param_count_table();
    EXPECT_GT(rows.size(), 20u);
    for (const auto& r : rows) EXPECT_EQ(r.counted, r.expected) << r.model << " " << r.method << " " << r.site;
}

TEST(Equivalence, BothArchitecturesExact) {
    EquivalenceOptions opts;
    opts.draws = 6;
    for (nn::Arch arch : {nn::Arch::cnn, nn::Arch::vit}) {
        const auto s = equivalence_draws(arch, 3, opts);
        EXPECT_EQ(s.draws, 6u);
        EXPECT_LT(s.max_discrepancy, 1e-9);
        EXPECT_LT(s.zero_prompt_discrepancy, 1e-9);
    }
}

TEST(Equivalence, ViolatedPreconditionsThrow) {
    EquivalenceOptions opts;
    opts.draws = 2;
    opts.cnn_padding = Padding::zero;
    EXPECT_THROW(equivalence_draws(nn::Arch::cnn, 1, opts), analysis::PreconditionError);
    opts = {};
    opts.draws = 2;
    opts.shared_delta = false;
    EXPECT_THROW(equivalence_draws(nn::Arch::vit, 1, opts), analysis::PreconditionError);
}

TEST(GratingTask, ShapesLabelsAndDeterminism) {
    GratingTaskSpec spec;
    const auto a = grating_dataset(spec, 40, 9), b = grating_dataset(spec, 40, 9);
    EXPECT_EQ(a.x.shape, (Shape{40, 3, 8, 8}));
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.x.data, b.x.data);
    std::size_t ones = 0;
    for (int y : a.labels) {
        EXPECT_TRUE(y == 0 || y == 1);
        ones += y;
    }
    EXPECT_GT(ones, 5u);
    EXPECT_LT(ones, 35u);
}

TEST(GratingTask, NoiselessSampleHasDeclaredFrequency) {
    GratingTaskSpec spec;
    spec.noise = 0.0;
    spec.channels = 1;
    const auto d = grating_dataset(spec, 8, 2);
    for (std::size_t n = 0; n < d.size(); ++n) {
        const double* img = d.x.data.data() + n * 64;
        const std::size_t f = spec.low_freq + static_cast<std::size_t>(d.labels[n]);
        // Energy at frequency f along rows or columns dominates every other frequency.
        double best = 0.0, at_f = 0.0;
        for (std::size_t k = 1; k <= 4; ++k) {
            for (int axis = 0; axis < 2; ++axis) {
                double re = 0.0, im = 0.0;
                for (std::size_t i = 0; i < 8; ++i)
                    for (std::size_t j = 0; j < 8; ++j) {
                        const double t = 2.0 * M_PI * static_cast<double>(k * (axis ? j : i)) / 8.0;
                        re += img[i * 8 + j] * std::cos(t);
                        im += img[i * 8 + j] * std::sin(t);
                    }
                const double e = re * re + im * im;
                best = std::max(best, e);
                if (k == f) at_f = std::max(at_f, e);
            }
        }
        EXPECT_EQ(at_f, best);
        EXPECT_GT(at_f, 0.0);
    }
}

TEST(LayerPreference, HalvesAndSmallRun) {
    EXPECT_FALSE(in_deeper_half(2, 6));
    EXPECT_TRUE(in_deeper_half(3, 6));
    EXPECT_FALSE(in_deeper_half(2, 5));
    EXPECT_TRUE(in_deeper_half(3, 5));

    auto cfg = default_layer_preference(nn::Arch::vit);
    cfg.seeds = 1;
    cfg.n_train = 16;
    cfg.n_test = 32;
    cfg.sweep.lr_grid = {1e-2};
    cfg.sweep.train.epochs = 1;
    cfg.sweep.train.batch_size = 8;
    const auto a = layer_preference(cfg);
    cfg.sweep.jobs = 2;
    const auto b = layer_preference(cfg);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].sweep.best.size(), 6u);
    EXPECT_EQ(a[0].sweep.argmax_site, b[0].sweep.argmax_site);
    for (std::size_t i = 0; i < a[0].sweep.runs.size(); ++i)
        EXPECT_EQ(a[0].sweep.runs[i].record.losses, b[0].sweep.runs[i].record.losses);
}
