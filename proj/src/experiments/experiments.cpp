#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "aplab/experiments.hpp"
#include "aplab/seed.hpp"

namespace aplab::experiments {

namespace {

Tensor uniform(Shape s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

// Seed streams of one layer-preference run.
enum Stream : std::uint64_t { kModel = 1, kPretrainData, kTrainData, kTestData, kTrainOrder };

}  // namespace

EquivalenceSummary equivalence_draws(nn::Arch arch, std::uint64_t seed, const EquivalenceOptions& opts) {
    EquivalenceSummary s;
    s.arch = arch;
    s.draws = opts.draws;
    for (std::size_t k = 0; k < opts.draws; ++k) {
        std::mt19937_64 rng(job_seed(seed, {static_cast<std::uint64_t>(arch), k}));
        const std::size_t site = 1 + k % 4;
        nn::LayeredModel model;
        Tensor batch, delta;
        if (arch == nn::Arch::cnn) {
            const std::size_t kernel = opts.cnn_kernel ? opts.cnn_kernel : (k % 2 == 0 ? 1 : 3);
            model = nn::build_toy_cnn({.in_channels = 3, .kernel = kernel, .padding = opts.cnn_padding}, rng());
            batch = uniform({4, 8, 5, 5}, rng);
            delta = opts.shared_delta ? uniform({8}, rng) : uniform({8, 5, 5}, rng);
        } else {
            model = nn::build_toy_vit({.in_channels = 4, .tokens = 6, .width = 8, .mlp_hidden = 16}, rng());
            std::uniform_real_distribution<double> mu(-0.5, 0.5), sigma(0.5, 2.0);
            batch = opts.equal_moments ? analysis::equal_moment_tokens(3, 8, 6, mu(rng), sigma(rng), rng)
                                       : uniform({3, 8, 6}, rng);
            delta = opts.shared_delta ? uniform({8}, rng) : uniform({8, 6}, rng);
        }
        s.max_discrepancy = std::max(s.max_discrepancy, analysis::normtune_from_ap(model, site, delta, batch).max_discrepancy);
        if (k == 0) {
            s.zero_prompt_discrepancy =
                analysis::normtune_from_ap(model, site, Tensor::zeros(delta.shape), batch).max_discrepancy;
        }
    }
    return s;
}

std::vector<ParamCountRow> param_count_table() {
    using prompting::Method;
    using prompting::ShapeMode;
    std::vector<ParamCountRow> rows;
    auto add = [&](const std::string& name, const nn::LayeredModel& m, const Shape& in, prompting::PromptSpec spec,
                   std::size_t expected) {
        rows.push_back({name, prompting::to_string(spec.method), prompting::to_string(spec.shape_mode), spec.site,
                        prompting::count_params(spec, m, in), expected});
    };

    // Toy CNN: 3x8x8 input, 8 channels, 4 conv-BN blocks, 2 classes.
    const auto cnn = nn::build_toy_cnn({}, 0);
    const Shape img{3, 8, 8};
    const std::size_t cnn_head = 8 * 2 + 2;
    add("toy_cnn", cnn, img, {.method = Method::vp_additive, .train_head = false}, 3 * 8 * 8);
    add("toy_cnn", cnn, img, {.method = Method::vp_resize_concat, .train_head = false, .inner_h = 6, .inner_w = 6},
        3 * (64 - 36));
    add("toy_cnn", cnn, img, {.method = Method::norm_tune, .train_head = false}, 2 * 4 * 8);
    add("toy_cnn", cnn, img, {.method = Method::norm_tune}, 2 * 4 * 8 + cnn_head);
    add("toy_cnn", cnn, img, {.method = Method::linear_probe}, cnn_head);
    for (std::size_t s = 0; s < cnn.num_sites(); ++s) {
        const std::size_t channels = s == 0 ? 3 : 8;
        add("toy_cnn", cnn, img, {.method = Method::ap, .site = nn::site_name(s), .train_head = false}, channels * 64);
        add("toy_cnn", cnn, img,
            {.method = Method::ap, .site = nn::site_name(s), .shape_mode = ShapeMode::shared_spatial, .train_head = false},
            channels);
        add("toy_cnn", cnn, img, {.method = Method::ap, .site = nn::site_name(s)}, channels * 64 + cnn_head);
    }

    // Toy ViT: 8 tokens of dimension 4, width 16, 4 pre-norm blocks (two LayerNorms each).
    const auto vit = nn::build_toy_vit({}, 0);
    const Shape tok{4, 8};
    const std::size_t vit_head = 16 * 2 + 2;
    add("toy_vit", vit, tok, {.method = Method::vp_additive, .train_head = false}, 4 * 8);
    add("toy_vit", vit, tok, {.method = Method::norm_tune, .train_head = false}, 2 * 4 * 2 * 16);
    add("toy_vit", vit, tok, {.method = Method::norm_tune}, 2 * 4 * 2 * 16 + vit_head);
    add("toy_vit", vit, tok, {.method = Method::linear_probe}, vit_head);
    for (std::size_t s = 0; s < vit.num_sites(); ++s) {
        const std::size_t width = s == 0 ? 4 : 16;
        add("toy_vit", vit, tok, {.method = Method::ap, .site = nn::site_name(s), .train_head = false}, width * 8);
        add("toy_vit", vit, tok,
            {.method = Method::ap, .site = nn::site_name(s), .shape_mode = ShapeMode::shared_token, .train_head = false},
            width);
    }
    return rows;
}

prompting::Dataset grating_dataset(const GratingTaskSpec& spec, std::size_t n, std::uint64_t seed) {
    if (spec.size == 0 || spec.channels == 0) throw std::invalid_argument("grating task: empty image");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    const std::size_t S = spec.size, C = spec.channels;
    prompting::Dataset d;
    d.x = Tensor({n, C, S, S});
    std::vector<double> amp(C);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng() % 2);
        for (auto& a : amp) a = spec.amplitude * normal(rng);
        const bool columns = rng() % 2 == 1;
        const double f = static_cast<double>(spec.low_freq + static_cast<std::size_t>(label));
        const double ph = phase(rng);
        double* out = d.x.data.data() + i * C * S * S;
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t y = 0; y < S; ++y) {
                for (std::size_t x = 0; x < S; ++x) {
                    const double t = static_cast<double>(columns ? y : x);
                    out[(c * S + y) * S + x] = amp[c] * std::cos(2.0 * std::numbers::pi * f * t / static_cast<double>(S) + ph) +
                                               spec.noise * normal(rng);
                }
            }
        }
        d.labels.push_back(label);
    }
    return d;
}

prompting::Dataset theory_token_dataset(const theory::SyntheticTaskSpec& spec, const theory::PatternBasis& basis,
                                        std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    prompting::Dataset d = theory::gen_dataset(spec, basis, n, rng);
    for (auto& l : d.labels) l = l > 0 ? 1 : 0;
    d.num_classes = 2;
    return d;
}

double pretrain(nn::LayeredModel& model, const prompting::Dataset& data, const prompting::TrainConfig& cfg) {
    if (cfg.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be positive");
    model.set_requires_grad(true);
    std::vector<prompting::NamedParam> params;
    for (auto& b : model.blocks) {
        for (auto& [k, t] : b.params) params.push_back({b.name + "." + k, &t});
    }
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    prompting::AdamState adam;
    double last = 0.0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t s = 0; s < data.size(); s += cfg.batch_size) {
            std::span<const std::size_t> idx(order.data() + s, std::min(cfg.batch_size, data.size() - s));
            for (auto& p : params) p.tensor->grad.reset();
            Tape tape;
            nn::ForwardOptions opts;
            opts.mode = nn::Mode::train;
            const auto out = nn::forward(model, tape, tape.constant(data.gather(idx)), opts);
            const auto labels = data.gather_labels(idx);
            Var loss = cross_entropy(out.logits, labels);
            tape.backward(loss);
            if (cfg.optimizer == prompting::Optimizer::adam) {
                prompting::adam_step(params, adam, cfg.learning_rate, cfg.weight_decay);
            } else {
                prompting::sgd_step(params, cfg.learning_rate, cfg.weight_decay);
            }
            total += loss.item();
            ++batches;
        }
        last = batches ? total / static_cast<double>(batches) : 0.0;
    }
    model.set_requires_grad(false);
    for (auto& p : params) p.tensor->grad.reset();
    return last;
}

LayerPreferenceConfig default_layer_preference(nn::Arch arch) {
    LayerPreferenceConfig c;
    c.arch = arch;
    c.sweep.include_baselines = false;
    c.sweep.train.batch_size = 32;
    if (arch == nn::Arch::cnn) {
        c.n_train = 128;
        c.source = {};
        c.target = {.noise = 1.0};
        c.pretrain_train.epochs = 10;
        c.pretrain_train.batch_size = 32;
        c.pretrain_train.learning_rate = 1e-2;
        c.sweep.lr_grid = {1e-3, 1e-2, 1e-1};
        c.sweep.train.epochs = 10;
    } else {
        c.n_train = 64;
        c.tokens.P = 8;
        c.tokens.d = 4;
        c.sweep.train.epochs = 20;
    }
    return c;
}

bool in_deeper_half(std::size_t site, std::size_t num_sites) { return 2 * site >= num_sites; }

std::vector<LayerPreferenceRun> layer_preference(const LayerPreferenceConfig& cfg) {
    std::vector<LayerPreferenceRun> runs;
    const auto arch = static_cast<std::uint64_t>(cfg.arch);
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
        auto seed = [&](Stream s) { return job_seed(cfg.base_seed, {arch, k, s}); };
        LayerPreferenceRun run;
        run.seed_index = k;
        nn::LayeredModel model;
        prompting::Dataset train_set, test_set;
        if (cfg.arch == nn::Arch::cnn) {
            model = nn::build_toy_cnn({.in_channels = cfg.target.channels}, seed(kModel));
            if (cfg.pretrain_train.epochs > 0) {
                prompting::TrainConfig pc = cfg.pretrain_train;
                pc.seed = seed(kTrainOrder) ^ 1;
                run.pretrain_loss =
                    pretrain(model, grating_dataset(cfg.source, cfg.pretrain_samples, seed(kPretrainData)), pc);
            }
            train_set = grating_dataset(cfg.target, cfg.n_train, seed(kTrainData));
            test_set = grating_dataset(cfg.target, cfg.n_test, seed(kTestData));
        } else {
            model = nn::build_toy_vit({.in_channels = cfg.tokens.d, .tokens = cfg.tokens.P}, seed(kModel));
            const auto basis = theory::gen_pattern_basis(cfg.tokens.d, cfg.tokens.zeta, cfg.basis_seed);
            train_set = theory_token_dataset(cfg.tokens, basis, cfg.n_train, seed(kTrainData));
            test_set = theory_token_dataset(cfg.tokens, basis, cfg.n_test, seed(kTestData));
        }
        analysis::LayerSweepConfig sc = cfg.sweep;
        sc.train.seed = seed(kTrainOrder);
        run.sweep = analysis::layer_sweep(model, train_set, test_set, sc);
        const bool deep = in_deeper_half(run.sweep.argmax_site, model.num_sites());
        run.expected_half = cfg.arch == nn::Arch::cnn ? deep : !deep;
        runs.push_back(std::move(run));
    }
    return runs;
}

}  // namespace aplab::experiments
