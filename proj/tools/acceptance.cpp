// Acceptance runner: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aplab/experiments.hpp"
#include "aplab/io.hpp"
#include "aplab/seed.hpp"
#include "commands.hpp"

using namespace aplab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

Tensor random_tensor(Shape s, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = nd(rng);
    return t;
}

Tensor random_orthogonal(std::size_t n, std::mt19937_64& rng) {
    Tensor q = random_tensor({n, n}, rng);
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t k = 0; k < c; ++k) {
            double dot = 0.0;
            for (std::size_t r = 0; r < n; ++r) dot += q.data[r * n + c] * q.data[r * n + k];
            for (std::size_t r = 0; r < n; ++r) q.data[r * n + c] -= dot * q.data[r * n + k];
        }
        double norm = 0.0;
        for (std::size_t r = 0; r < n; ++r) norm += q.data[r * n + c] * q.data[r * n + c];
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < n; ++r) q.data[r * n + c] /= norm;
    }
    return q;
}

Tensor mm(const Tensor& a, const Tensor& b) {
    Tape tape;
    return matmul(tape.constant(a), tape.constant(b)).value();
}

// ---------------------------------------------------------------------------

Outcome gradcheck(std::size_t jobs) {
    const auto t0 = std::chrono::steady_clock::now();
    experiments::GradcheckSuiteConfig cfg;
    cfg.jobs = jobs;
    cfg.negative_control = true;
    const auto rows = experiments::gradcheck_suite(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = true, control_caught = false;
    double worst = 0.0;
    std::string failed;
    std::size_t ops = 0;
    for (const auto& r : rows) {
        if (r.name == "corrupted_square") {
            control_caught = !r.pass();
            continue;
        }
        ++ops;
        ok = ok && r.pass() && r.instances == cfg.instances;
        if (!r.pass()) failed += " " + r.name;
        worst = std::max(worst, r.worst_rel_error / r.tolerance);
    }
    std::string d = std::to_string(ops) + " ops x " + std::to_string(cfg.instances) +
                    " instances, worst error/tolerance " + fmt(worst) + ", negative control " +
                    (control_caught ? "caught" : "MISSED") + ", " + fmt(secs) + " s";
    if (!failed.empty()) d += ", failed:" + failed;
    return {ok && control_caught && secs < 30.0, d};
}

Outcome equivalence(nn::Arch arch) {
    const auto s = experiments::equivalence_draws(arch, job_seed(0, {static_cast<std::uint64_t>(arch)}));
    return {s.draws == 50 && s.max_discrepancy < 1e-9 && s.zero_prompt_discrepancy < 1e-9,
            std::to_string(s.draws) + " draws, max discrepancy " + fmt(s.max_discrepancy)};
}

Outcome lemma1() {
    double worst = 0.0;
    std::size_t cases = 0;
    for (std::size_t P : {8, 16, 32}) {
        for (std::size_t dA : {1, 2, 3}) {
            theory::SyntheticTaskSpec spec;
            spec.P = P;
            spec.d_A = dA;
            const auto model = theory::build_constructed_vit(spec, theory::gen_pattern_basis(spec.d, spec.zeta, job_seed(0, {P, dA})));
            const auto r = theory::verify_lemma1(model, spec);
            worst = std::max({worst, std::abs(r.layer1 - r.expected_layer1), std::abs(r.layer2 - r.expected_layer2)});
            ++cases;
        }
    }
    return {worst <= 1e-12, std::to_string(cases) + " (P, d_A) cases, max error " + fmt(worst)};
}

Outcome sample_complexity(std::size_t jobs) {
    const auto t0 = std::chrono::steady_clock::now();
    theory::SweepConfig cfg;
    cfg.jobs = jobs;
    const auto cells = theory::sample_complexity_sweep(cfg);
    const auto summary = theory::summarize(cells, cfg);
    const auto ratios = theory::sample_ratios(summary, cfg.P_list);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = true;
    std::string d = "ratios N*(h=2)/N*(h=1):";
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        d += " P=" + std::to_string(cfg.P_list[i]) + ":" + fmt(ratios[i]);
        ok = ok && ratios[i] >= 1.0;  // NaN fails
        if (i > 0) ok = ok && ratios[i] >= ratios[i - 1];
    }
    std::size_t censored = 0;
    for (const auto& s : summary) censored += s.censored;
    d += ", censored cells " + std::to_string(censored) + ", " + fmt(secs) + " s";
    return {ok && secs < 1800.0, d};
}

Outcome vp_equals_site0() {
    double worst = 0.0;
    std::size_t runs = 0;
    for (nn::Arch arch : {nn::Arch::cnn, nn::Arch::vit}) {
        const bool cnn = arch == nn::Arch::cnn;
        const auto model = cnn ? nn::build_toy_cnn({}, 11) : nn::build_toy_vit({}, 11);
        const Shape in = cnn ? Shape{3, 8, 8} : Shape{4, 8};
        prompting::Dataset tr, te;
        if (cnn) {
            tr = experiments::grating_dataset({}, 64, 1);
            te = experiments::grating_dataset({}, 32, 2);
        } else {
            theory::SyntheticTaskSpec spec;
            const auto basis = theory::gen_pattern_basis(spec.d, spec.zeta, 7);
            tr = experiments::theory_token_dataset(spec, basis, 64, 1);
            te = experiments::theory_token_dataset(spec, basis, 32, 2);
        }
        for (auto opt : {prompting::Optimizer::sgd, prompting::Optimizer::adam}) {
            prompting::TrainConfig cfg{.optimizer = opt, .learning_rate = 0.05, .epochs = 3, .batch_size = 16, .seed = 5};
            auto vp = prompting::build_adaptation(model, {.method = prompting::Method::vp_additive}, in);
            auto ap = prompting::build_adaptation(model, {.method = prompting::Method::ap, .site = "site_0"}, in);
            const auto rv = prompting::train(vp, tr, te, cfg);
            const auto ra = prompting::train(ap, tr, te, cfg);
            if (rv.losses.size() != ra.losses.size()) return {false, "trajectory lengths differ"};
            worst = std::max(worst, max_abs_diff(rv.losses, ra.losses));
            worst = std::max(worst, max_abs_diff(vp.delta().data, ap.delta().data));
            ++runs;
        }
    }
    return {worst <= 1e-12, std::to_string(runs) + " runs (CNN/ViT x SGD/Adam), max loss/prompt difference " + fmt(worst)};
}

Outcome layer_preference(std::size_t jobs, double& elapsed) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string d;
    bool ok = true;
    for (nn::Arch arch : {nn::Arch::cnn, nn::Arch::vit}) {
        auto cfg = experiments::default_layer_preference(arch);
        cfg.sweep.jobs = jobs;
        const auto runs = experiments::layer_preference(cfg);
        std::size_t hits = 0;
        std::string sites;
        for (const auto& r : runs) {
            hits += r.expected_half;
            sites += (sites.empty() ? "" : ",") + std::to_string(r.sweep.argmax_site);
        }
        ok = ok && hits >= 4;
        d += std::string(arch == nn::Arch::cnn ? "CNN deeper half " : "; ViT shallower half ") + std::to_string(hits) +
             "/" + std::to_string(runs.size()) + " (argmax sites " + sites + ")";
    }
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    d += ", " + fmt(elapsed) + " s";
    return {ok && elapsed < 900.0, d};
}

Outcome cka_properties() {
    std::mt19937_64 rng(job_seed(0, {8}));
    double worst_self = 0.0, worst_sym = 0.0, worst_orth = 0.0, worst_scale = 0.0, worst_indep = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const Tensor x = random_tensor({200, 8}, rng);
        const Tensor y = random_tensor({200, 8}, rng);
        const double base = analysis::linear_cka(x, y);
        worst_self = std::max(worst_self, std::abs(analysis::linear_cka(x, x) - 1.0));
        worst_sym = std::max(worst_sym, std::abs(base - analysis::linear_cka(y, x)));
        worst_orth = std::max(worst_orth, std::abs(analysis::linear_cka(mm(x, random_orthogonal(8, rng)), y) - base));
        Tensor scaled = y;
        for (auto& v : scaled.data) v *= 13.0;
        worst_scale = std::max(worst_scale, std::abs(analysis::linear_cka(x, scaled) - base));
        worst_indep = std::max(worst_indep, base);
    }
    const bool ok = worst_self < 1e-12 && worst_sym < 1e-12 && worst_orth < 1e-9 && worst_scale < 1e-9 && worst_indep < 0.3;
    return {ok, "self " + fmt(worst_self) + ", symmetry " + fmt(worst_sym) + ", orthogonal " + fmt(worst_orth) +
                    ", scale " + fmt(worst_scale) + ", independent max " + fmt(worst_indep)};
}

Outcome param_counts() {
    const auto rows = experiments::param_count_table();
    std::size_t bad = 0;
    for (const auto& r : rows) bad += r.counted != r.expected;
    return {bad == 0 && !rows.empty(), std::to_string(rows.size()) + " (model, method, site) rows, " + std::to_string(bad) + " mismatches"};
}

// --- determinism through the command-line tool ------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int invoke(const std::vector<std::string>& args) {
    std::vector<std::string> storage{"aplab"};
    storage.insert(storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : storage) argv.push_back(s.data());
    std::ostringstream out, err;
    return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
}

// Byte comparison of every file in two output directories; run.json is
// compared without its wall-time field.
bool same_outputs(const fs::path& a, const fs::path& b, std::string& why) {
    std::set<std::string> names;
    for (const auto& dir : {a, b})
        for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
    for (const auto& n : names) {
        if (!fs::exists(a / n) || !fs::exists(b / n)) {
            why = n + " missing";
            return false;
        }
        std::string x = slurp(a / n), y = slurp(b / n);
        if (n == "run.json") {
            auto jx = io::Json::parse(x), jy = io::Json::parse(y);
            jx.erase("wall_time_s");
            jy.erase("wall_time_s");
            x = jx.dump();
            y = jy.dump();
        }
        if (x != y) {
            why = n + " differs";
            return false;
        }
    }
    return !names.empty() || (why = "no outputs", false);
}

Outcome determinism(const fs::path& scratch) {
    struct Case {
        std::string command;
        std::string config;
    };
    const std::vector<Case> cases{
        {"gradcheck", R"({"instances": 5})"},
        {"train", R"({"model": {"arch": "cnn"}, "data": {"n_train": 48, "n_test": 32},
                      "prompt": {"method": "ap", "site": "site_3"}, "train": {"epochs": 2, "batch_size": 16}})"},
        {"layer-sweep", R"({"arch": "vit", "seeds": 2, "n_train": 32, "n_test": 64,
                            "sweep": {"lr_grid": [0.01, 0.1], "train": {"epochs": 2, "batch_size": 16}}})"},
        {"theory", R"({"P_list": [8], "seeds": 3, "log2_n_max": 8, "n_test": 200})"},
        {"equiv", R"({"draws": 5})"},
        {"cka", R"({"n": 64})"},
        {"attn-dist", R"({"n": 32})"},
    };
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    std::size_t compared = 0;
    for (const auto& c : cases) {
        const fs::path cfg = scratch / (c.command + ".json");
        std::ofstream(cfg) << c.config;
        const fs::path serial = scratch / (c.command + "_serial"), again = scratch / (c.command + "_again"),
                       parallel = scratch / (c.command + "_parallel");
        const int r1 = invoke({c.command, "--config", cfg.string(), "--out", serial.string(), "--seed", "42", "--jobs", "1"});
        const int r2 = invoke({c.command, "--config", cfg.string(), "--out", again.string(), "--seed", "42", "--jobs", "1"});
        const int r3 = invoke({c.command, "--config", cfg.string(), "--out", parallel.string(), "--seed", "42", "--jobs", "4"});
        if (r1 != r2 || r1 != r3 || r1 > cli::kCheckFailed)
            return {false, c.command + " exit codes " + std::to_string(r1) + "/" + std::to_string(r2) + "/" + std::to_string(r3)};
        std::string why;
        if (!same_outputs(serial, again, why)) return {false, c.command + " repeat: " + why};
        if (!same_outputs(serial, parallel, why)) return {false, c.command + " serial vs --jobs 4: " + why};
        ++compared;
    }
    return {true, std::to_string(compared) + " subcommands byte-identical across repeat and --jobs 1/4"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aplab acceptance checks"};
    std::vector<int> only;
    std::size_t jobs = 1;
    std::string scratch = (fs::temp_directory_path() / "aplab_acceptance").string();
    app.add_option("--only", only, "criterion numbers to run (default all)");
    app.add_option("--jobs", jobs, "worker threads for the long experiments");
    app.add_option("--scratch", scratch, "directory for determinism outputs");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradcheck", [&] { return gradcheck(jobs); }},
        {"ViT LayerNorm equivalence", [] { return equivalence(nn::Arch::vit); }},
        {"CNN BatchNorm equivalence", [] { return equivalence(nn::Arch::cnn); }},
        {"constructed-model attention distances", lemma1},
        {"sample-complexity ordering", [&] { return sample_complexity(jobs); }},
        {"VP equals AP at site_0", vp_equals_site0},
        {"layer preference", [&] {
             double secs = 0.0;
             return layer_preference(jobs, secs);
         }},
        {"CKA properties", cka_properties},
        {"exact parameter counts", param_counts},
        {"bitwise determinism", [&] { return determinism(scratch); }},
    };

    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << ": " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
