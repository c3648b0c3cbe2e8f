#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "aplab/experiments.hpp"
#include "aplab/seed.hpp"

namespace aplab::cli {

namespace {

using io::ConfigError;
using io::ConfigObject;
using io::CsvTable;
using io::format_double;

std::string str(std::size_t v) { return std::to_string(v); }
std::string str(bool v) { return v ? "1" : "0"; }

std::ostream& log(const CommandContext& ctx) { return *ctx.log; }

std::uint64_t base_seed(const CommandContext& ctx, ConfigObject& root) {
    const std::uint64_t from_config = root.uint("seed", 0);
    return ctx.seed ? *ctx.seed : from_config;
}

void write_csv(const CommandContext& ctx, const std::string& name, const CsvTable& t) {
    io::write_text(ctx.out / name, io::to_csv(t));
}

nn::Arch read_arch(ConfigObject& o, nn::Arch fallback) {
    const std::string a = o.string("arch", nn::to_string(fallback));
    if (a == "cnn") return nn::Arch::cnn;
    if (a == "vit") return nn::Arch::vit;
    throw ConfigError(o.field("arch"), "expected \"cnn\" or \"vit\", got \"" + a + "\"");
}

template <class E>
E read_choice(ConfigObject& o, const std::string& key, const std::vector<std::pair<std::string, E>>& choices, E fallback) {
    std::string current;
    for (const auto& [name, value] : choices) {
        if (value == fallback) current = name;
    }
    const std::string s = o.string(key, current);
    for (const auto& [name, value] : choices) {
        if (name == s) return value;
    }
    std::string options;
    for (const auto& c : choices) options += (options.empty() ? "" : ", ") + c.first;
    throw ConfigError(o.field(key), "expected one of " + options + ", got \"" + s + "\"");
}

experiments::GratingTaskSpec read_grating(ConfigObject o, experiments::GratingTaskSpec g) {
    g.size = o.uint("size", g.size);
    g.channels = o.uint("channels", g.channels);
    g.low_freq = o.uint("low_freq", g.low_freq);
    g.amplitude = o.number("amplitude", g.amplitude);
    g.noise = o.number("noise", g.noise);
    o.finish();
    if (g.size == 0 || g.channels == 0) throw ConfigError(o.path(), "size and channels must be positive");
    if (2 * (g.low_freq + 1) > g.size) throw ConfigError(o.field("low_freq"), "frequency above Nyquist for this size");
    return g;
}

theory::SyntheticTaskSpec read_tokens(ConfigObject o, theory::SyntheticTaskSpec s) {
    s.P = o.uint("P", s.P);
    s.d = o.uint("d", s.d);
    s.noise_c = o.number("noise_c", s.noise_c);
    s.sigma = o.number("sigma", s.sigma);
    s.zeta = o.number("zeta", s.zeta);
    s.d_A = o.uint("d_A", s.d_A);
    o.finish();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.path(), e.what());
    }
    return s;
}

analysis::LayerSweepConfig read_sweep(ConfigObject o, analysis::LayerSweepConfig c) {
    c.lr_grid = o.numbers("lr_grid", c.lr_grid);
    if (c.lr_grid.empty()) throw ConfigError(o.field("lr_grid"), "must not be empty");
    if (o.has("train")) c.train = io::read_train_config(o.object("train"), c.train);
    try {
        c.shape_mode = prompting::parse_shape_mode(o.string("shape_mode", prompting::to_string(c.shape_mode)));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(o.field("shape_mode"), e.what());
    }
    c.train_head = o.boolean("train_head", c.train_head);
    c.include_baselines = o.boolean("include_baselines", c.include_baselines);
    o.finish();
    return c;
}

std::vector<std::string> run_row(std::size_t seed, const analysis::SweepRun& r) {
    return {str(seed),
            r.method,
            r.site,
            format_double(r.lr),
            str(r.record.epochs),
            str(r.record.n_train),
            str(r.record.param_count),
            format_double(r.record.final_train_acc),
            format_double(r.record.final_test_acc),
            str(r.record.diverged)};
}

const std::vector<std::string> kRunHeader{"seed",          "method",        "site",          "lr",    "epochs", "n_train",
                                          "param_count",   "final_train_acc", "final_test_acc", "diverged"};

// Datasets for the train command: synthetic families or CSV files.
struct LoadedData {
    prompting::Dataset train;
    prompting::Dataset test;
};

enum Stream : std::uint64_t { kModel = 1, kTrainData, kTestData, kTrainOrder, kInputs };

LoadedData read_data(ConfigObject o, nn::Arch arch, std::uint64_t seed) {
    const std::string source = o.string("source", arch == nn::Arch::cnn ? "grating" : "theory");
    const std::size_t n_train = o.uint("n_train", 128);
    const std::size_t n_test = o.uint("n_test", 500);
    LoadedData d;
    if (source == "grating") {
        const auto g = read_grating(o.object("grating"), {});
        d.train = experiments::grating_dataset(g, n_train, job_seed(seed, {kTrainData}));
        d.test = experiments::grating_dataset(g, n_test, job_seed(seed, {kTestData}));
    } else if (source == "theory") {
        const auto t = read_tokens(o.object("tokens"), {});
        const auto basis = theory::gen_pattern_basis(t.d, t.zeta, o.uint("basis_seed", 7));
        d.train = experiments::theory_token_dataset(t, basis, n_train, job_seed(seed, {kTrainData}));
        d.test = experiments::theory_token_dataset(t, basis, n_test, job_seed(seed, {kTestData}));
    } else if (source == "csv") {
        const auto geometry = o.uints("geometry", {});
        if (geometry.empty()) throw ConfigError(o.field("geometry"), "required for csv data");
        const std::size_t classes = o.uint("num_classes", 2);
        if (classes < 2) throw ConfigError(o.field("num_classes"), "must be at least 2");
        const Shape shape(geometry.begin(), geometry.end());
        const std::string train_path = o.string("train_path", "");
        const std::string test_path = o.string("test_path", "");
        if (train_path.empty()) throw ConfigError(o.field("train_path"), "required for csv data");
        d.train = io::load_csv_dataset(train_path, shape, classes);
        d.test = test_path.empty() ? d.train : io::load_csv_dataset(test_path, shape, classes);
    } else {
        throw ConfigError(o.field("source"), "expected \"grating\", \"theory\" or \"csv\", got \"" + source + "\"");
    }
    o.finish();
    return d;
}

nn::LayeredModel make_model(nn::Arch arch, const prompting::Dataset& data, std::uint64_t seed, const std::string& path) {
    if (!path.empty()) {
        if (!std::filesystem::exists(path)) throw io::IoError("parameter file not found: " + path);
        return nn::load_params(path);
    }
    const Shape s = data.sample_shape();
    if (arch == nn::Arch::cnn) {
        if (s.size() != 3) throw ConfigError("data.geometry", "the toy CNN takes [channels, height, width] samples");
        return nn::build_toy_cnn({.in_channels = s[0], .num_classes = data.num_classes}, seed);
    }
    if (s.size() != 2) throw ConfigError("data.geometry", "the toy ViT takes [dim, tokens] samples");
    return nn::build_toy_vit({.in_channels = s[0], .tokens = s[1], .num_classes = data.num_classes}, seed);
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_gradcheck(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    experiments::GradcheckSuiteConfig cfg;
    cfg.seed = base_seed(ctx, root);
    cfg.instances = root.uint("instances", cfg.instances);
    cfg.step = root.number("step", cfg.step);
    cfg.kink_margin = root.number("kink_margin", cfg.kink_margin);
    cfg.negative_control = root.boolean("negative_control", cfg.negative_control);
    root.finish();
    if (cfg.instances == 0) throw ConfigError("instances", "must be positive");
    if (!(cfg.step > 0.0)) throw ConfigError("step", "must be positive");
    cfg.jobs = ctx.jobs;

    const auto checks = experiments::gradcheck_suite(cfg);
    CsvTable t{{"op", "instances", "rejected", "worst_rel_error", "tolerance", "pass"}, {}};
    bool ok = true;
    for (const auto& c : checks) {
        t.add_row({c.name, str(c.instances), str(c.rejected), format_double(c.worst_rel_error),
                   format_double(c.tolerance), str(c.pass())});
        log(ctx) << (c.pass() ? "PASS " : "FAIL ") << c.name << " worst_rel_error=" << format_double(c.worst_rel_error)
                 << " tol=" << format_double(c.tolerance) << " n=" << c.instances << "\n";
        ok = ok && c.pass();
    }
    write_csv(ctx, "gradcheck.csv", t);
    return ok ? kOk : kCheckFailed;
}

int cmd_train(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    const std::uint64_t seed = base_seed(ctx, root);
    ConfigObject model_cfg = root.object("model");
    const nn::Arch arch = read_arch(model_cfg, nn::Arch::cnn);
    const std::string params_path = model_cfg.string("params", "");
    model_cfg.finish();
    const LoadedData data = read_data(root.object("data"), arch, seed);
    const prompting::PromptSpec spec = root.has("prompt") ? io::read_prompt_spec(root.object("prompt")) : prompting::PromptSpec{};
    prompting::TrainConfig tc;
    tc.seed = job_seed(seed, {kTrainOrder});
    if (root.has("train")) tc = io::read_train_config(root.object("train"), tc);
    root.finish();

    nn::LayeredModel model = make_model(arch, data.train, job_seed(seed, {kModel}), params_path);
    prompting::Adaptation adaptation(model, spec, data.train.sample_shape());
    prompting::RunRecord rec = prompting::train(adaptation, data.train, data.test, tc);

    io::write_text(ctx.out / "run.json", io::to_json(rec).dump(2) + "\n");
    CsvTable losses{{"step", "loss"}, {}};
    for (std::size_t i = 0; i < rec.losses.size(); ++i) losses.add_row({str(i), format_double(rec.losses[i])});
    write_csv(ctx, "losses.csv", losses);
    log(ctx) << "method=" << rec.method << " site=" << rec.site << " params=" << rec.param_count
             << " initial_test_acc=" << format_double(rec.initial_test_acc)
             << " final_test_acc=" << format_double(rec.final_test_acc) << (rec.diverged ? " DIVERGED" : "") << "\n";
    return kOk;
}

int cmd_layer_sweep(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    const std::uint64_t seed = base_seed(ctx, root);
    const nn::Arch arch = read_arch(root, nn::Arch::cnn);
    experiments::LayerPreferenceConfig cfg = experiments::default_layer_preference(arch);
    cfg.base_seed = seed;
    cfg.sweep.include_baselines = true;
    cfg.seeds = root.uint("seeds", cfg.seeds);
    cfg.n_train = root.uint("n_train", cfg.n_train);
    cfg.n_test = root.uint("n_test", cfg.n_test);
    if (root.has("source")) cfg.source = read_grating(root.object("source"), cfg.source);
    if (root.has("target")) cfg.target = read_grating(root.object("target"), cfg.target);
    cfg.pretrain_samples = root.uint("pretrain_samples", cfg.pretrain_samples);
    if (root.has("pretrain")) cfg.pretrain_train = io::read_train_config(root.object("pretrain"), cfg.pretrain_train);
    if (root.has("tokens")) cfg.tokens = read_tokens(root.object("tokens"), cfg.tokens);
    cfg.basis_seed = root.uint("basis_seed", cfg.basis_seed);
    if (root.has("sweep")) cfg.sweep = read_sweep(root.object("sweep"), cfg.sweep);
    root.finish();
    if (cfg.n_train == 0 || cfg.n_test == 0) throw ConfigError("n_train", "n_train and n_test must be positive");
    cfg.sweep.jobs = ctx.jobs;

    const auto runs = experiments::layer_preference(cfg);
    CsvTable all{kRunHeader, {}};
    CsvTable best{{"seed", "method", "site", "best_lr", "best_test_acc", "all_diverged", "argmax"}, {}};
    std::size_t hits = 0;
    for (const auto& r : runs) {
        for (const auto& run : r.sweep.runs) all.add_row(run_row(r.seed_index, run));
        for (std::size_t i = 0; i < r.sweep.best.size(); ++i) {
            const auto& b = r.sweep.best[i];
            best.add_row({str(r.seed_index), b.method, b.site, format_double(b.best_lr), format_double(b.best_test_acc),
                          str(b.all_diverged), str(i == r.sweep.argmax_site)});
        }
        hits += r.expected_half ? 1 : 0;
        log(ctx) << "seed " << r.seed_index << ": argmax " << nn::site_name(r.sweep.argmax_site) << "\n";
    }
    write_csv(ctx, "layer_sweep.csv", all);
    write_csv(ctx, "layer_sweep_best.csv", best);
    log(ctx) << "argmax in the " << (arch == nn::Arch::cnn ? "deeper" : "shallower") << " half: " << hits << "/"
             << runs.size() << "\n";
    return kOk;
}

int cmd_theory(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    theory::SweepConfig cfg;
    cfg.base_seed = base_seed(ctx, root);
    cfg.P_list = root.uints("P_list", {cfg.P_list.begin(), cfg.P_list.end()});
    {
        std::vector<std::uint64_t> hs(cfg.h_list.begin(), cfg.h_list.end());
        hs = root.uints("h_list", hs);
        cfg.h_list.clear();
        for (auto h : hs) {
            if (h != 1 && h != 2) throw ConfigError("h_list", "prompt layers are 1 or 2");
            cfg.h_list.push_back(static_cast<int>(h));
        }
    }
    cfg.seeds = root.uint("seeds", cfg.seeds);
    cfg.log2_n_min = root.uint("log2_n_min", cfg.log2_n_min);
    cfg.log2_n_max = root.uint("log2_n_max", cfg.log2_n_max);
    cfg.target_acc = root.number("target_acc", cfg.target_acc);
    cfg.n_test = root.uint("n_test", cfg.n_test);
    cfg.batch_size = root.uint("batch_size", cfg.batch_size);
    cfg.d_A = root.uint("d_A", cfg.d_A);
    cfg.zeta = root.number("zeta", cfg.zeta);
    cfg.noise_c = root.number("noise_c", cfg.noise_c);
    cfg.m = root.uint("m", cfg.m);
    if (root.has("protocol")) {
        const io::Json& list = root.raw("protocol");
        if (!list.is_array()) throw ConfigError("protocol", "expected an array of objects");
        for (std::size_t i = 0; i < list.size(); ++i) {
            ConfigObject p(list[i], "protocol[" + str(i) + "]");
            theory::TheoryProtocol tp = theory::default_protocol(p.uint("P", 8));
            tp.learning_rate = p.number("learning_rate", tp.learning_rate);
            tp.steps = p.uint("steps", tp.steps);
            tp.epochs = p.uint("epochs", tp.epochs);
            p.finish();
            cfg.protocol.push_back(tp);
        }
    }
    std::vector<std::uint64_t> lemma_P{8, 16, 32}, lemma_dA{1, 2, 3};
    if (root.has("lemma")) {
        ConfigObject l = root.object("lemma");
        lemma_P = l.uints("P_list", lemma_P);
        lemma_dA = l.uints("d_A_list", lemma_dA);
        l.finish();
    }
    root.finish();
    if (cfg.P_list.empty() || cfg.seeds == 0) throw ConfigError("P_list", "need at least one P and one seed");
    if (cfg.log2_n_min > cfg.log2_n_max) throw ConfigError("log2_n_min", "exceeds log2_n_max");
    cfg.jobs = ctx.jobs;

    // Distance check first: it is cheap and decides the exit status.
    CsvTable lemma{{"P", "d_A", "layer1", "expected_layer1", "layer2", "expected_layer2", "max_abs_error"}, {}};
    double lemma_err = 0.0;
    for (auto P : lemma_P) {
        for (auto dA : lemma_dA) {
            theory::SyntheticTaskSpec spec;
            spec.P = P;
            spec.d_A = dA;
            try {
                spec.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError("lemma", e.what());
            }
            const auto model = theory::build_constructed_vit(spec, theory::gen_pattern_basis(spec.d, spec.zeta, job_seed(cfg.base_seed, {P, dA})));
            const auto r = theory::verify_lemma1(model, spec);
            const double err = std::max(std::abs(r.layer1 - r.expected_layer1), std::abs(r.layer2 - r.expected_layer2));
            lemma_err = std::max(lemma_err, err);
            lemma.add_row({str(P), str(dA), format_double(r.layer1), format_double(r.expected_layer1),
                           format_double(r.layer2), format_double(r.expected_layer2), format_double(err)});
        }
    }
    write_csv(ctx, "lemma1.csv", lemma);
    const bool lemma_ok = lemma_err <= 1e-12;
    log(ctx) << "lemma1 layer1 = (1 + d_A)/P, layer2 = 1/P over " << lemma.rows.size() << " cases\n"
             << "lemma1 max |observed - expected| = " << format_double(lemma_err) << (lemma_ok ? " exact" : " MISMATCH")
             << "\n";

    const auto cells = theory::sample_complexity_sweep(cfg);
    CsvTable sweep{{"P", "h", "seed", "N_star", "censored", "steps_used", "delta_norm", "test_acc_at_Nstar"}, {}};
    CsvTable probes{{"P", "h", "seed", "N", "test_acc"}, {}};
    for (const auto& c : cells) {
        sweep.add_row({str(c.P), std::to_string(c.h), str(c.seed), str(c.N_star), str(c.censored), str(c.steps_used),
                       format_double(c.delta_norm), format_double(c.test_acc_at_N_star)});
        for (const auto& [n, acc] : c.probes) {
            probes.add_row({str(c.P), std::to_string(c.h), str(c.seed), str(n), format_double(acc)});
        }
    }
    write_csv(ctx, "sweep.csv", sweep);
    write_csv(ctx, "probes.csv", probes);

    const auto summary = theory::summarize(cells, cfg);
    CsvTable st{{"P", "h", "median_N_star", "censored"}, {}};
    for (const auto& s : summary) {
        st.add_row({str(s.P), std::to_string(s.h), format_double(s.median_N_star), str(s.censored)});
        log(ctx) << "P=" << s.P << " h=" << s.h << " median N*=" << format_double(s.median_N_star)
                 << (s.censored ? " (" + str(s.censored) + " censored)" : "") << "\n";
    }
    write_csv(ctx, "summary.csv", st);

    bool ordered = true;
    const bool both_layers = std::count(cfg.h_list.begin(), cfg.h_list.end(), 1) && std::count(cfg.h_list.begin(), cfg.h_list.end(), 2);
    if (both_layers) {
        const auto ratios = theory::sample_ratios(summary, cfg.P_list);
        CsvTable rt{{"P", "ratio_h2_h1"}, {}};
        for (std::size_t i = 0; i < ratios.size(); ++i) {
            rt.add_row({str(cfg.P_list[i]), format_double(ratios[i])});
            ordered = ordered && ratios[i] >= 1.0;
            if (i > 0) ordered = ordered && ratios[i] >= ratios[i - 1];
        }
        write_csv(ctx, "ratios.csv", rt);
        log(ctx) << "orderings " << (ordered ? "hold" : "VIOLATED") << "\n";
    }
    return lemma_ok && ordered ? kOk : kCheckFailed;
}

int cmd_equiv(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    const std::uint64_t seed = base_seed(ctx, root);
    experiments::EquivalenceOptions opts;
    opts.draws = root.uint("draws", opts.draws);
    opts.cnn_kernel = root.uint("cnn_kernel", opts.cnn_kernel);
    opts.cnn_padding = read_choice<Padding>(root, "cnn_padding", {{"circular", Padding::circular}, {"zero", Padding::zero}},
                                            opts.cnn_padding);
    opts.shared_delta = root.boolean("shared_delta", opts.shared_delta);
    opts.equal_moments = root.boolean("equal_moments", opts.equal_moments);
    std::vector<std::string> cases{"cnn", "vit"};
    if (root.has("cases")) {
        const io::Json& c = root.raw("cases");
        cases.clear();
        if (!c.is_array()) throw ConfigError("cases", "expected an array of \"cnn\" / \"vit\"");
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (!c[i].is_string() || (c[i] != "cnn" && c[i] != "vit")) {
                throw ConfigError("cases[" + str(i) + "]", "expected \"cnn\" or \"vit\"");
            }
            cases.push_back(c[i].get<std::string>());
        }
    }
    root.finish();
    if (opts.cnn_kernel != 0 && opts.cnn_kernel % 2 == 0) throw ConfigError("cnn_kernel", "must be odd (or 0 to alternate)");

    CsvTable t{{"case", "draws", "max_discrepancy", "zero_prompt_discrepancy"}, {}};
    bool ok = true;
    for (const auto& c : cases) {
        const auto s = experiments::equivalence_draws(c == "cnn" ? nn::Arch::cnn : nn::Arch::vit, seed, opts);
        t.add_row({c, str(s.draws), format_double(s.max_discrepancy), format_double(s.zero_prompt_discrepancy)});
        const bool pass = s.max_discrepancy < 1e-9;
        log(ctx) << c << ": max discrepancy " << format_double(s.max_discrepancy) << " over " << s.draws
                 << " draws, zero prompt " << format_double(s.zero_prompt_discrepancy) << (pass ? "" : " FAIL") << "\n";
        ok = ok && pass;
    }
    write_csv(ctx, "equiv.csv", t);
    return ok ? kOk : kCheckFailed;
}

int cmd_cka(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    const std::uint64_t seed = base_seed(ctx, root);
    const nn::Arch arch = read_arch(root, nn::Arch::vit);
    const std::size_t n = root.uint("n", 200);
    const std::uint64_t seed_a = root.uint("model_a_seed", job_seed(seed, {kModel, 0}));
    const std::uint64_t seed_b = root.uint("model_b_seed", job_seed(seed, {kModel, 1}));
    root.finish();
    if (n < 2) throw ConfigError("n", "need at least 2 samples");

    auto a = arch == nn::Arch::cnn ? nn::build_toy_cnn({}, seed_a) : nn::build_toy_vit({}, seed_a);
    auto b = arch == nn::Arch::cnn ? nn::build_toy_cnn({}, seed_b) : nn::build_toy_vit({}, seed_b);
    const Shape in = arch == nn::Arch::cnn ? Shape{3, 8, 8} : Shape{4, 8};
    Shape batch_shape{n};
    batch_shape.insert(batch_shape.end(), in.begin(), in.end());
    Tensor x(batch_shape);
    std::mt19937_64 rng(job_seed(seed, {kInputs}));
    std::normal_distribution<double> normal;
    for (auto& v : x.data) v = normal(rng);

    auto activations = [&](nn::LayeredModel& m) {
        Tape tape;
        const auto r = nn::forward(m, tape, tape.constant(x));
        std::vector<Tensor> acts;
        for (const auto& v : r.activations) acts.push_back(v.value());
        return acts;
    };
    const auto acts_a = activations(a), acts_b = activations(b);
    CsvTable t{{"comparison", "site_a", "site_b", "cka"}, {}};
    auto emit = [&](const std::string& name, const analysis::SimilarityMatrix& m) {
        for (std::size_t i = 0; i < m.rows; ++i) {
            for (std::size_t j = 0; j < m.cols; ++j) {
                t.add_row({name, nn::site_name(i), nn::site_name(j), format_double(m.at(i, j))});
            }
        }
    };
    emit("a_vs_a", analysis::cka_matrix(acts_a, acts_a));
    const auto cross = analysis::cka_matrix(acts_a, acts_b);
    emit("a_vs_b", cross);
    write_csv(ctx, "cka.csv", t);
    for (std::size_t i = 0; i < cross.rows && i < cross.cols; ++i) {
        log(ctx) << nn::site_name(i) << ": cka(a, b) = " << format_double(cross.at(i, i)) << "\n";
    }
    return kOk;
}

int cmd_attn_dist(const CommandContext& ctx) {
    ConfigObject root(ctx.config, "");
    const std::uint64_t seed = base_seed(ctx, root);
    const std::string model_kind = root.string("model", "constructed");
    analysis::AttentionDistanceOptions opts;
    opts.distance = read_choice<analysis::DistanceKind>(
        root, "distance", {{"absolute", analysis::DistanceKind::absolute}, {"circular", analysis::DistanceKind::circular}},
        opts.distance);
    opts.ties = read_choice<analysis::TiePolicy>(
        root, "ties", {{"smallest_index", analysis::TiePolicy::smallest_index}, {"nearest_index", analysis::TiePolicy::nearest_index}},
        opts.ties);
    opts.tie_tolerance = root.number("tie_tolerance", opts.tie_tolerance);
    const std::size_t n = root.uint("n", 256);
    const theory::SyntheticTaskSpec tokens = root.has("tokens") ? read_tokens(root.object("tokens"), {}) : theory::SyntheticTaskSpec{};
    root.finish();
    if (n == 0) throw ConfigError("n", "must be positive");

    const auto basis = theory::gen_pattern_basis(tokens.d, tokens.zeta, job_seed(seed, {kModel}));
    const prompting::Dataset data = experiments::theory_token_dataset(tokens, basis, n, job_seed(seed, {kInputs}));
    Tape tape;
    std::vector<Var> attn;
    if (model_kind == "constructed") {
        const auto model = theory::build_constructed_vit(tokens, basis);
        const auto vars = nn::bind_constants(tape, model.params);
        const auto out = nn::two_layer_vit_forward(tape.constant(data.x), vars, 1, Var{});
        attn = {out.attn1, out.attn2};
    } else if (model_kind == "toy_vit") {
        auto model = nn::build_toy_vit({.in_channels = tokens.d, .tokens = tokens.P}, job_seed(seed, {kModel, 1}));
        attn = nn::forward(model, tape, tape.constant(data.x)).attention;
    } else {
        throw ConfigError("model", "expected \"constructed\" or \"toy_vit\", got \"" + model_kind + "\"");
    }
    CsvTable t{{"model", "layer", "avg_attention_distance"}, {}};
    for (std::size_t l = 0; l < attn.size(); ++l) {
        const double d = analysis::batch_attention_distance(attn[l].value(), opts);
        t.add_row({model_kind, str(l + 1), format_double(d)});
        log(ctx) << model_kind << " layer " << l + 1 << ": " << format_double(d) << "\n";
    }
    write_csv(ctx, "attn_dist.csv", t);
    return kOk;
}

// ---------------------------------------------------------------------------

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Activation-prompt experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--out", out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", seed, "base seed (overrides the config)");
    app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

    using Cmd = int (*)(const CommandContext&);
    const std::vector<std::tuple<std::string, std::string, Cmd>> commands{
        {"gradcheck", "finite-difference suite over every op", cmd_gradcheck},
        {"train", "one adaptation run", cmd_train},
        {"layer-sweep", "best accuracy per prompt site", cmd_layer_sweep},
        {"theory", "constructed-model attention check and sample-complexity sweep", cmd_theory},
        {"equiv", "Norm-Tune reproduction of activation prompts", cmd_equiv},
        {"cka", "linear CKA between toy-model activations", cmd_cka},
        {"attn-dist", "average attention distance per layer", cmd_attn_dist},
    };
    for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kConfigError;
    }

    CommandContext ctx;
    ctx.out = out_dir;
    ctx.jobs = jobs;
    ctx.log = &out;
    if (*seed_opt) ctx.seed = seed;
    try {
        if (!config_path.empty()) ctx.config = io::parse_json(io::read_text(config_path), config_path);
        for (const auto& [name, help, fn] : commands) {
            if (app.got_subcommand(name)) return fn(ctx);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const analysis::PreconditionError& e) {
        err << "precondition violated: " << e.what() << "\n";
        return kConfigError;
    } catch (const io::IoError& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "I/O error: " << e.what() << "\n";
        return kIoError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }
    return kConfigError;
}

}  // namespace aplab::cli
