#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "aplab/experiments.hpp"
#include "aplab/gradcheck.hpp"
#include "aplab/nn.hpp"
#include "aplab/parallel.hpp"
#include "aplab/seed.hpp"

namespace aplab::experiments {

namespace {

using Rng = std::mt19937_64;

Tensor uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.data) v = u(rng);
    return t;
}

Tensor positive(Shape s, Rng& rng) { return uniform(std::move(s), rng, 0.5, 1.5); }

struct Instance {
    std::vector<Tensor> inputs;
    ScalarProgram program;
};

using Fn = std::function<Var(const std::vector<Var>&)>;

// Contracts a tensor-valued op to a scalar with fixed random weights so every
// output coordinate carries gradient.
Instance projected(Fn op, std::vector<Tensor> inputs, Rng& rng) {
    Tape probe;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(probe.constant(t));
    const Tensor w = uniform(op(vars).shape(), rng);
    return {std::move(inputs), [op = std::move(op), w](Tape& tape, const std::vector<Var>& in) {
                return sum_all(mul(op(in), tape.constant(w)));
            }};
}

struct OpDef {
    std::string name;
    double tolerance;
    std::function<Instance(Rng&)> draw;
};

OpDef simple(std::string name, Fn op, std::vector<Shape> shapes, bool pos = false) {
    return {std::move(name), 1e-6, [op, shapes, pos](Rng& rng) {
                std::vector<Tensor> in;
                for (const auto& s : shapes) in.push_back(pos ? positive(s, rng) : uniform(s, rng));
                return projected(op, std::move(in), rng);
            }};
}

// y = x^2 recorded with a backward of 2.1 x instead of 2 x.
Var corrupted_square(Var x) {
    Tensor y = x.value();
    for (auto& v : y.data) v *= v;
    return x.tape().record(std::move(y), {x}, [](Tape& tape, std::size_t id) {
        const std::size_t in = tape.input_id(id, 0);
        if (!tape.needs_grad_of(in)) return;
        const auto& g = tape.grad_of(id);
        const auto& xv = tape.value_of(in).data;
        auto acc = tape.grad_accumulator(in);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += 2.1 * xv[i] * g[i];
    });
}

Instance vit_hinge_composite(Rng& rng) {
    theory::SyntheticTaskSpec spec;
    spec.P = 8;
    const auto model = theory::build_constructed_vit(spec, theory::gen_pattern_basis(spec.d, spec.zeta, rng()));
    const int h = 1 + static_cast<int>(rng() % 2);
    // Perturbed weights keep the softmax away from its saturated, permutation-exact point.
    auto jitter = [&](const Tensor& t) {
        Tensor out = t;
        for (auto& v : out.data) v += 0.1 * uniform({1}, rng).data[0];
        return out;
    };
    std::vector<Tensor> inputs{theory::gen_sample(spec, model.basis, 1, rng), theory::gen_sample(spec, model.basis, -1, rng),
                               uniform(h == 1 ? Shape{spec.d, spec.P} : Shape{model.m, spec.P}, rng, -0.3, 0.3),
                               jitter(model.params.wq1), jitter(model.params.wk1), jitter(model.params.wq2),
                               jitter(model.params.a)};
    const auto params = model.params;
    const std::size_t P = spec.P;
    auto scores = [params, h](Tape& tape, const std::vector<Var>& in) {
        nn::TwoLayerVitVars v = nn::bind_constants(tape, params);
        v.wq1 = in[3];
        v.wk1 = in[4];
        v.wq2 = in[5];
        v.a = in[6];
        return std::pair{nn::two_layer_vit_forward(in[0], v, h, in[2]).score,
                         nn::two_layer_vit_forward(in[1], v, h, in[2]).score};
    };
    // Labels opposite to the current scores keep both hinges active.
    Tape probe;
    std::vector<Var> vars;
    for (auto& t : inputs) vars.push_back(probe.constant(t));
    const auto [s0, s1] = scores(probe, vars);
    const int y0 = s0.item() > 0 ? -1 : 1, y1 = s1.item() > 0 ? -1 : 1;
    return {std::move(inputs), [scores, y0, y1, P](Tape& tape, const std::vector<Var>& in) {
                const auto [a, b] = scores(tape, in);
                return add(theory::hinge_loss(a, y0, P), theory::hinge_loss(b, y1, P));
            }};
}

std::vector<OpDef> suite_ops(bool negative_control) {
    std::vector<OpDef> ops = {
        simple("add", [](auto& in) { return add(in[0], in[1]); }, {{3, 4}, {4}}),
        simple("sub", [](auto& in) { return sub(in[0], in[1]); }, {{3, 4}, {3, 4}}),
        simple("mul", [](auto& in) { return mul(in[0], in[1]); }, {{3, 4}, {4}}),
        simple("div", [](auto& in) { return div(in[0], in[1]); }, {{3, 4}, {4}}, true),
        simple("scale", [](auto& in) { return scale(in[0], -1.7); }, {{5}}),
        simple("add_scalar", [](auto& in) { return add_scalar(in[0], 0.3); }, {{5}}),
        simple("neg", [](auto& in) { return neg(in[0]); }, {{5}}),
        simple("exp", [](auto& in) { return exp(in[0]); }, {{5}}),
        simple("log", [](auto& in) { return log(in[0]); }, {{5}}, true),
        simple("sqrt", [](auto& in) { return sqrt(in[0]); }, {{5}}, true),
        simple("relu", [](auto& in) { return relu(in[0]); }, {{6}}),
        simple("matmul", [](auto& in) { return matmul(in[0], in[1]); }, {{2, 3}, {3, 2}}),
        simple("matmul_batched", [](auto& in) { return matmul(in[0], in[1]); }, {{2, 3, 4}, {4, 2}}),
        simple("transpose", [](auto& in) { return transpose(in[0]); }, {{2, 3, 4}}),
        simple("permute", [](auto& in) { return permute(in[0], {2, 0, 1}); }, {{2, 3, 4}}),
        simple("reshape", [](auto& in) { return reshape(in[0], {4, 3}); }, {{2, 6}}),
        simple("softmax", [](auto& in) { return softmax(in[0], 0); }, {{4, 3}}),
        simple("sum", [](auto& in) { return sum(in[0], 1); }, {{3, 4}}),
        simple("mean", [](auto& in) { return mean(in[0], -1); }, {{3, 4}}),
        simple("var", [](auto& in) { return var(in[0], 0); }, {{4, 3}}),
        simple("sum_all", [](auto& in) { return sum_all(in[0]); }, {{3, 4}}),
        simple("mean_all", [](auto& in) { return mean_all(in[0]); }, {{3, 4}}),
        simple("broadcast_axis", [](auto& in) { return broadcast_axis(in[0], 1, 3); }, {{2, 2}}),
        simple("conv2d_circular", [](auto& in) { return conv2d(in[0], in[1], Padding::circular); },
               {{1, 2, 4, 4}, {2, 2, 3, 3}}),
        simple("conv2d_zero", [](auto& in) { return conv2d(in[0], in[1], Padding::zero); },
               {{1, 2, 4, 4}, {3, 2, 3, 3}}),
        simple("resize_bilinear", [](auto& in) { return resize_bilinear(in[0], 5, 3); }, {{1, 2, 3, 4}}),
        simple("frame_compose", [](auto& in) { return frame_compose(in[0], in[1], 4, 4); }, {{2, 12}, {1, 2, 2, 2}}),
        {"cross_entropy", 1e-6,
         [](Rng& rng) {
             std::vector<int> labels{static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)};
             return Instance{{uniform({2, 3}, rng, -2.0, 2.0)}, [labels](Tape&, const std::vector<Var>& in) {
                                 return cross_entropy(in[0], labels);
                             }};
         }},
        simple("linear", [](auto& in) { return nn::linear(in[0], in[1], in[2]); }, {{3, 4}, {2, 4}, {2}}),
        simple("token_linear", [](auto& in) { return nn::token_linear(in[0], in[1], in[2]); },
               {{2, 3, 4}, {5, 3}, {5}}),
        simple("token_mlp", [](auto& in) { return nn::token_mlp(in[0], in[1], in[2], in[3], in[4]); },
               {{2, 3, 4}, {5, 3}, {5}, {3, 5}, {3}}),
        simple("channel_expand", [](auto& in) { return nn::channel_expand(in[0], 2, 3); }, {{4}}),
        {"batchnorm_train", 1e-6,
         [](Rng& rng) {
             auto state = std::make_shared<nn::BatchNormState>();
             state->running_mean = Tensor::zeros({2});
             state->running_var = Tensor::ones({2});
             return projected(
                 [state](auto& in) { return nn::batchnorm(in[0], in[1], in[2], *state, true); },
                 {uniform({3, 2, 2, 2}, rng), positive({2}, rng), uniform({2}, rng)}, rng);
         }},
        {"batchnorm_eval", 1e-6,
         [](Rng& rng) {
             auto state = std::make_shared<nn::BatchNormState>();
             state->running_mean = uniform({2}, rng);
             state->running_var = positive({2}, rng);
             return projected(
                 [state](auto& in) { return nn::batchnorm(in[0], in[1], in[2], *state, false); },
                 {uniform({3, 2, 2, 2}, rng), positive({2}, rng), uniform({2}, rng)}, rng);
         }},
        simple("layernorm", [](auto& in) { return nn::layernorm(in[0], in[1], in[2]); }, {{2, 4, 3}, {4}, {4}}),
        simple("attention_block",
               [](auto& in) { return nn::attention_block(in[0], in[1], in[2], in[3], 0.5).out; },
               {{2, 3, 4}, {3, 3}, {3, 3}, {3, 3}}),
        {"conv_bn_relu", 1e-6,
         [](Rng& rng) {
             auto state = std::make_shared<nn::BatchNormState>();
             state->running_mean = Tensor::zeros({2});
             state->running_var = Tensor::ones({2});
             return projected(
                 [state](auto& in) {
                     return nn::conv_bn_relu_block(in[0], in[1], in[2], in[3], *state, true, Padding::circular);
                 },
                 {uniform({2, 2, 3, 3}, rng), uniform({2, 2, 3, 3}, rng), positive({2}, rng), uniform({2}, rng)}, rng);
         }},
        {"vit_hinge_composite", 1e-5, vit_hinge_composite},
    };
    if (negative_control) ops.push_back(simple("corrupted_square", [](auto& in) { return corrupted_square(in[0]); }, {{4}}));
    return ops;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
    std::vector<std::string> names;
    for (const auto& op : suite_ops(false)) names.push_back(op.name);
    return names;
}

std::vector<OpCheck> gradcheck_suite(const GradcheckSuiteConfig& cfg) {
    const auto ops = suite_ops(cfg.negative_control);
    std::vector<OpCheck> out(ops.size());
    parallel_for(ops.size(), cfg.jobs, [&](std::size_t k) {
        OpCheck& r = out[k];
        r.name = ops[k].name;
        r.tolerance = ops[k].tolerance;
        Rng rng(job_seed(cfg.seed, {k}));
        // A kinked draw is redrawn; the cap only guards against an op that always sits on a kink.
        const std::size_t max_draws = 20 * cfg.instances;
        for (std::size_t draws = 0; r.instances < cfg.instances && draws < max_draws; ++draws) {
            Instance inst = ops[k].draw(rng);
            const GradCheckResult g = gradcheck(inst.program, std::move(inst.inputs), cfg.step);
            if (g.kink_margin < cfg.kink_margin) {
                ++r.rejected;
                continue;
            }
            ++r.instances;
            r.worst_rel_error = std::max(r.worst_rel_error, g.max_rel_error);
        }
    });
    return out;
}

}  // namespace aplab::experiments
