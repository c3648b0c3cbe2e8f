#include <algorithm>
#include <cmath>
#include <limits>

#include "aplab/parallel.hpp"
#include "aplab/seed.hpp"
#include "aplab/theory.hpp"

namespace aplab::theory {

void SyntheticTaskSpec::validate() const {
    if (d < 4) throw std::invalid_argument("synthetic task: d must be at least 4, got " + std::to_string(d));
    if (P < 2) throw std::invalid_argument("synthetic task: P must be at least 2");
    if (!(zeta > -1.0 && zeta < 0.0)) throw std::invalid_argument("synthetic task: zeta must lie in (-1, 0)");
    if (d_A < 1 || d_A > P - 1) throw std::invalid_argument("synthetic task: d_A must lie in [1, P-1]");
    if (noise() < 0.0) throw std::invalid_argument("synthetic task: negative noise");
}

std::vector<double> PatternBasis::pattern(std::size_t i) const {
    const std::size_t d = v.shape[1];
    return {v.data.begin() + static_cast<std::ptrdiff_t>(i * d), v.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)};
}

PatternBasis gen_pattern_basis(std::size_t d, double zeta, std::uint64_t seed) {
    if (d < 4) throw std::invalid_argument("gen_pattern_basis: d must be at least 4, got " + std::to_string(d));
    if (!(zeta > -1.0 && zeta < 0.0)) throw std::invalid_argument("gen_pattern_basis: zeta must lie in (-1, 0)");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    // Four orthonormal directions by Gram-Schmidt with one reorthogonalization pass.
    std::vector<std::vector<double>> q;
    while (q.size() < 4) {
        std::vector<double> v(d);
        for (auto& x : v) x = nd(rng);
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& u : q) {
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += u[i] * v[i];
                for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
            }
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        q.push_back(std::move(v));
    }
    const double half = std::acos(zeta) / 2.0;
    PatternBasis b;
    b.v = Tensor(Shape{4, d});
    for (std::size_t i = 0; i < d; ++i) {
        b.v.data[0 * d + i] = q[0][i];
        b.v.data[1 * d + i] = q[1][i];
        b.v.data[2 * d + i] = std::cos(half) * q[2][i] + std::sin(half) * q[3][i];
        b.v.data[3 * d + i] = std::cos(half) * q[2][i] - std::sin(half) * q[3][i];
    }
    return b;
}

Tensor gen_sample(const SyntheticTaskSpec& spec, const PatternBasis& basis, int y, std::mt19937_64& rng,
                  std::size_t* discriminative_pos) {
    if (y != 1 && y != -1) throw std::invalid_argument("gen_sample: label must be +1 or -1");
    const std::size_t d = spec.d, p = spec.P;
    std::uniform_int_distribution<std::size_t> pos_dist(0, p - 1);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double sigma = spec.noise();
    const std::size_t pos = pos_dist(rng);
    if (discriminative_pos) *discriminative_pos = pos;
    Tensor x(Shape{d, p});
    for (std::size_t t = 0; t < p; ++t) {
        const std::size_t pattern = t == pos ? (y == 1 ? 0 : 1) : (coin(rng) ? 2 : 3);
        for (std::size_t i = 0; i < d; ++i) x.data[i * p + t] = basis.v.data[pattern * d + i];
    }
    if (sigma > 0.0) {
        for (auto& v : x.data) v += sigma * noise(rng);
    }
    return x;
}

prompting::Dataset gen_dataset(const SyntheticTaskSpec& spec, const PatternBasis& basis, std::size_t n,
                               std::mt19937_64& rng) {
    prompting::Dataset ds;
    ds.num_classes = 2;
    ds.x = Tensor(Shape{n, spec.d, spec.P});
    std::bernoulli_distribution coin(0.5);
    const std::size_t row = spec.d * spec.P;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = coin(rng) ? 1 : -1;
        const Tensor s = gen_sample(spec, basis, y, rng);
        std::copy(s.data.begin(), s.data.end(), ds.x.data.begin() + static_cast<std::ptrdiff_t>(i * row));
        ds.labels.push_back(y);
    }
    return ds;
}

Tensor cyclic_shift(std::size_t p, std::size_t s) {
    Tensor m(Shape{p, p});
    for (std::size_t j = 0; j < p; ++j) m.data[((j + s) % p) * p + j] = 1.0;
    return m;
}

ConstructedViT build_constructed_vit(const SyntheticTaskSpec& spec, const PatternBasis& basis, std::size_t m,
                                     double beta1, double beta2, std::size_t shift2) {
    spec.validate();
    if (m == 0 || m % 4 != 0) throw std::invalid_argument("build_constructed_vit: m must be a positive multiple of 4");
    if (basis.v.shape != Shape{4, spec.d}) throw DimensionError("build_constructed_vit: basis does not match d");
    const std::size_t d = spec.d, p = spec.P, g = m / 4;
    ConstructedViT c;
    c.basis = basis;
    c.m = m;
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.shift1 = spec.d_A;
    c.shift2 = shift2;
    auto& w = c.params;
    auto scaled_identity = [](std::size_t n, double s) {
        Tensor t = Tensor::identity(n);
        for (auto& v : t.data) v *= s;
        return t;
    };
    w.wq1 = scaled_identity(d, beta1);
    w.wk1 = scaled_identity(d, beta1);
    w.wv1 = Tensor::identity(d);
    w.perm1 = cyclic_shift(p, spec.d_A);
    w.wo1 = Tensor(Shape{m, d});
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t i = 0; i < d; ++i) w.wo1.data[r * d + i] = basis.v.data[(r / g) * d + i];
    }
    w.wu1 = Tensor::identity(m);
    w.wq2 = scaled_identity(m, beta2);
    w.wk2 = scaled_identity(m, beta2);
    w.wv2 = Tensor::identity(m);
    w.perm2 = cyclic_shift(p, shift2);
    // Row r is e_{group(r)}: the unit indicator of that row's neuron group.
    w.wo2 = Tensor(Shape{m, m});
    const double e = 1.0 / std::sqrt(static_cast<double>(g));
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t col = 0; col < m; ++col) w.wo2.data[r * m + col] = (col / g == r / g) ? e : 0.0;
    }
    w.wu2 = Tensor::identity(m);
    w.a = Tensor(Shape{m});
    const double amp = 1.0 / static_cast<double>(m * p);
    for (std::size_t r = 0; r < m; ++r) w.a.data[r] = (r / g) % 2 == 0 ? amp : -amp;
    return c;
}

double hinge_loss(double score, int y, std::size_t P) {
    return std::max(0.0, 1.0 / static_cast<double>(P) - static_cast<double>(y) * score);
}

Var hinge_loss(Var score, int y, std::size_t P) {
    return relu(add_scalar(scale(score, -static_cast<double>(y)), 1.0 / static_cast<double>(P)));
}

TheoryPrompt::TheoryPrompt(const ConstructedViT& model, int h, std::size_t P) : model_(&model), h_(h) {
    if (h != 1 && h != 2) throw std::invalid_argument("theory prompt layer must be 1 or 2");
    delta_ = Tensor::zeros({h == 1 ? model.basis.v.shape[1] : model.m, P});
    delta_.requires_grad = true;
}

Var TheoryPrompt::forward(Tape& tape, Var x) {
    const nn::TwoLayerVitVars vars = nn::bind_constants(tape, model_->params);
    return nn::two_layer_vit_forward(x, vars, h_, tape.leaf(delta_)).score;
}

TheoryRun train_theory_prompt(const SyntheticTaskSpec& spec, const ConstructedViT& model, int h,
                              const TheoryTrainConfig& cfg) {
    spec.validate();
    std::mt19937_64 data_rng(spec.seed);
    const prompting::Dataset train_set = gen_dataset(spec, model.basis, spec.n_train, data_rng);
    const prompting::Dataset test_set = gen_dataset(spec, model.basis, spec.n_test, data_rng);
    TheoryPrompt prompt(model, h, spec.P);
    prompting::TrainConfig tc;
    tc.optimizer = prompting::Optimizer::sgd;
    tc.learning_rate = cfg.learning_rate;
    tc.batch_size = std::min(cfg.batch_size, spec.n_train);
    const std::size_t per_epoch = (spec.n_train + tc.batch_size - 1) / tc.batch_size;
    if (cfg.epochs > 0) {
        tc.epochs = cfg.epochs;
        tc.max_steps = std::min(cfg.steps, cfg.epochs * per_epoch);
    } else {
        tc.epochs = (cfg.steps + per_epoch - 1) / per_epoch;
        tc.max_steps = cfg.steps;
    }
    tc.seed = cfg.seed;
    prompting::Loss loss{prompting::LossKind::hinge, 1.0 / static_cast<double>(spec.P)};
    TheoryRun run{prompting::train(prompt, train_set, test_set, tc, loss), prompt.delta()};
    run.record.method = "ap";
    run.record.site = h == 1 ? "layer_1" : "layer_2";
    run.record.shape_mode = "full";
    return run;
}

TheoryProtocol default_protocol(std::size_t P) { return {P, static_cast<double>(P) / 8.0, 20000, 8}; }

namespace {

TheoryProtocol protocol_for(const SweepConfig& cfg, std::size_t P) {
    for (const auto& p : cfg.protocol) {
        if (p.P == P) return p;
    }
    return default_protocol(P);
}

}  // namespace

std::vector<SweepCell> sample_complexity_sweep(const SweepConfig& cfg) {
    if (cfg.log2_n_min > cfg.log2_n_max) throw std::invalid_argument("sweep: empty N grid");
    struct Job {
        std::size_t P;
        int h;
        std::size_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t P : cfg.P_list) {
        for (int h : cfg.h_list) {
            for (std::size_t s = 0; s < cfg.seeds; ++s) jobs.push_back({P, h, s});
        }
    }
    std::vector<SweepCell> cells(jobs.size());
    parallel_for(jobs.size(), cfg.jobs, [&](std::size_t j) {
        const Job job = jobs[j];
        const TheoryProtocol proto = protocol_for(cfg, job.P);
        SweepCell cell;
        cell.P = job.P;
        cell.h = job.h;
        cell.seed = job.seed;

        struct Probe {
            double acc;
            double delta_norm;
            std::size_t steps;
        };
        auto evaluate = [&](std::size_t log2n) {
            const std::size_t n = std::size_t{1} << log2n;
            SyntheticTaskSpec spec;
            spec.P = job.P;
            spec.d_A = cfg.d_A;
            spec.zeta = cfg.zeta;
            spec.noise_c = cfg.noise_c;
            spec.n_train = n;
            spec.n_test = cfg.n_test;
            // Data (and the basis orientation) are shared by h = 1 and h = 2 at each N.
            spec.seed = job_seed(cfg.base_seed, {job.P, job.seed, n});
            const PatternBasis basis = gen_pattern_basis(spec.d, spec.zeta, job_seed(cfg.base_seed, {job.P, job.seed}));
            const ConstructedViT model = build_constructed_vit(spec, basis, cfg.m);
            TheoryTrainConfig tc;
            tc.learning_rate = proto.learning_rate;
            tc.steps = proto.steps;
            tc.epochs = proto.epochs;
            tc.batch_size = cfg.batch_size;
            tc.seed = job_seed(cfg.base_seed, {job.P, static_cast<std::uint64_t>(job.h), job.seed, n});
            TheoryRun run = train_theory_prompt(spec, model, job.h, tc);
            double norm = 0.0;
            for (double v : run.delta.data) norm += v * v;
            const double acc = run.record.diverged ? 0.0 : run.record.final_test_acc;
            cell.probes.emplace_back(n, acc);
            return Probe{acc, std::sqrt(norm), run.record.steps};
        };

        // Bisection over log2 N assuming success is monotone in N.
        std::size_t lo = cfg.log2_n_min, hi = cfg.log2_n_max;
        Probe at_hi = evaluate(hi);
        if (at_hi.acc < cfg.target_acc) {
            cell.censored = true;
            cell.steps_used = at_hi.steps;
            cell.delta_norm = at_hi.delta_norm;
            cell.test_acc_at_N_star = at_hi.acc;
        } else {
            Probe best = at_hi;
            std::size_t best_log2 = hi;
            std::size_t left = lo;
            std::size_t right = hi;  // known success
            while (left < right) {
                const std::size_t mid = left + (right - left) / 2;
                Probe p = evaluate(mid);
                if (p.acc >= cfg.target_acc) {
                    right = mid;
                    best = p;
                    best_log2 = mid;
                } else {
                    left = mid + 1;
                }
            }
            cell.N_star = std::size_t{1} << best_log2;
            cell.steps_used = best.steps;
            cell.delta_norm = best.delta_norm;
            cell.test_acc_at_N_star = best.acc;
        }
        cells[j] = std::move(cell);
    });
    return cells;
}

std::vector<SweepSummary> summarize(const std::vector<SweepCell>& cells, const SweepConfig& cfg) {
    std::vector<SweepSummary> out;
    const double censored_value = std::numeric_limits<double>::infinity();
    for (std::size_t P : cfg.P_list) {
        for (int h : cfg.h_list) {
            std::vector<double> v;
            SweepSummary s{P, h, 0.0, 0};
            for (const auto& c : cells) {
                if (c.P != P || c.h != h) continue;
                if (c.censored) ++s.censored;
                v.push_back(c.censored ? censored_value : static_cast<double>(c.N_star));
            }
            if (v.empty()) continue;
            std::sort(v.begin(), v.end());
            const std::size_t n = v.size();
            s.median_N_star = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
            out.push_back(s);
        }
    }
    return out;
}

std::vector<double> sample_ratios(const std::vector<SweepSummary>& s, const std::vector<std::size_t>& P_list) {
    std::vector<double> out;
    for (std::size_t P : P_list) {
        double n1 = std::numeric_limits<double>::quiet_NaN(), n2 = n1;
        for (const auto& row : s) {
            if (row.P != P) continue;
            if (row.h == 1) n1 = row.median_N_star;
            if (row.h == 2) n2 = row.median_N_star;
        }
        out.push_back(std::isinf(n1) && std::isinf(n2) ? std::numeric_limits<double>::quiet_NaN() : n2 / n1);
    }
    return out;
}

analysis::AttentionDistanceOptions lemma1_distance_options() {
    return {analysis::DistanceKind::absolute, analysis::TiePolicy::nearest_index, 1e-9};
}

Lemma1Result verify_lemma1(const ConstructedViT& model, const SyntheticTaskSpec& spec) {
    const std::size_t d = spec.d, p = spec.P;
    Tensor x(Shape{d, p});
    const std::size_t pos = p / 2;
    for (std::size_t t = 0; t < p; ++t) {
        const std::size_t pattern = t == pos ? 0 : 3;
        for (std::size_t i = 0; i < d; ++i) x.data[i * p + t] = model.basis.v.data[pattern * d + i];
    }
    Tape tape;
    const nn::TwoLayerVitVars vars = nn::bind_constants(tape, model.params);
    const nn::TwoLayerVitOutput out = nn::two_layer_vit_forward(tape.constant(x), vars, 1, Var{});
    const auto opts = lemma1_distance_options();
    Lemma1Result r;
    r.layer1 = analysis::avg_attention_distance(out.attn1.value(), opts);
    r.layer2 = analysis::avg_attention_distance(out.attn2.value(), opts);
    r.expected_layer1 = static_cast<double>(1 + spec.d_A) / static_cast<double>(p);
    r.expected_layer2 = 1.0 / static_cast<double>(p);
    return r;
}

}  // namespace aplab::theory
