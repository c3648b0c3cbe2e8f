#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "aplab/prompting.hpp"

namespace aplab::prompting {

Tensor Dataset::gather(std::span<const std::size_t> index) const {
    const std::size_t row = x.size() / std::max<std::size_t>(x.shape.at(0), 1);
    Shape s = x.shape;
    s[0] = index.size();
    Tensor out(s);
    for (std::size_t i = 0; i < index.size(); ++i) {
        std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(index[i] * row), row,
                    out.data.begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> index) const {
    std::vector<int> out;
    out.reserve(index.size());
    for (std::size_t i : index) out.push_back(labels[i]);
    return out;
}

void sgd_step(std::span<const NamedParam> params, double lr, double weight_decay) {
    for (const auto& p : params) {
        Tensor& t = *p.tensor;
        if (!t.grad && weight_decay == 0.0) continue;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double g = (t.grad ? (*t.grad)[i] : 0.0) + weight_decay * t.data[i];
            t.data[i] -= lr * g;
        }
    }
}

void adam_step(std::span<const NamedParam> params, AdamState& st, double lr, double weight_decay) {
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.tensor->size(), 0.0);
            st.v.emplace_back(p.tensor->size(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
    ++st.t;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& t = *params[k].tensor;
        auto& m = st.m[k];
        auto& v = st.v[k];
        if (m.size() != t.size()) throw DimensionError("adam_step: state shape mismatch for " + params[k].name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double g = (t.grad ? (*t.grad)[i] : 0.0) + weight_decay * t.data[i];
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            t.data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
        }
    }
}

Var batch_loss(Var output, std::span<const int> labels, const Loss& loss) {
    if (loss.kind == LossKind::cross_entropy) return cross_entropy(output, labels);
    if (output.shape() != Shape{labels.size()}) {
        throw DimensionError("hinge loss: scores " + shape_str(output.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    }
    Tensor y(Shape{labels.size()});
    for (std::size_t i = 0; i < labels.size(); ++i) y.data[i] = labels[i];
    Var margin_gap = add_scalar(neg(mul(output, output.tape().constant(y))), loss.margin);
    return mean_all(relu(margin_gap));
}

double accuracy(Adaptable& model, const Dataset& data, const Loss& loss) {
    constexpr std::size_t chunk = 256;
    const std::size_t n = data.size();
    if (n == 0) return 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> index;
    for (std::size_t start = 0; start < n; start += chunk) {
        index.resize(std::min(chunk, n - start));
        std::iota(index.begin(), index.end(), start);
        Tape tape;
        const Tensor out = model.forward(tape, tape.constant(data.gather(index))).value();
        for (std::size_t i = 0; i < index.size(); ++i) {
            const int y = data.labels[index[i]];
            if (loss.kind == LossKind::hinge) {
                if (static_cast<double>(y) * out.data[i] > 0.0) ++correct;
            } else {
                const std::size_t c = out.shape[1];
                const double* row = out.data.data() + i * c;
                // First maximal entry wins ties.
                const auto best = static_cast<int>(std::max_element(row, row + c) - row);
                if (best == y) ++correct;
            }
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

RunRecord train(Adaptable& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
                const Loss& loss) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = train_set.size();
    if (n == 0) throw std::invalid_argument("train: empty training set");
    if (cfg.batch_size == 0 || cfg.batch_size > n) {
        throw std::invalid_argument("train: batch size " + std::to_string(cfg.batch_size) + " not in [1, " +
                                    std::to_string(n) + "]");
    }
    if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be nonnegative");

    RunRecord rec;
    rec.seed = cfg.seed;
    rec.optimizer = cfg.optimizer == Optimizer::sgd ? "sgd" : "adam";
    rec.learning_rate = cfg.learning_rate;
    rec.epochs = cfg.epochs;
    rec.batch_size = cfg.batch_size;
    rec.weight_decay = cfg.weight_decay;
    rec.n_train = n;
    rec.n_test = test_set.size();
    rec.initial_test_acc = accuracy(model, test_set, loss);

    const std::vector<NamedParam> params = model.trainables();
    for (const auto& p : params) {
        p.tensor->requires_grad = true;
        p.tensor->grad.reset();
    }
    for (const auto& p : params) rec.param_count += p.tensor->size();

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    AdamState adam;
    bool stop = false;
    for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n && !stop; start += cfg.batch_size) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
            for (const auto& p : params) p.tensor->grad.reset();
            Tape tape;
            Var out;
            Var l;
            try {
                out = model.forward(tape, tape.constant(train_set.gather(idx)));
                l = batch_loss(out, train_set.gather_labels(idx), loss);
            } catch (const NumericError&) {
                rec.diverged = true;
                break;
            }
            const double value = l.item();
            if (!std::isfinite(value) || value > rec.divergence_threshold) {
                rec.diverged = true;
                break;
            }
            rec.losses.push_back(value);
            tape.backward(l);
            if (cfg.optimizer == Optimizer::sgd) {
                sgd_step(params, cfg.learning_rate, cfg.weight_decay);
            } else {
                adam_step(params, adam, cfg.learning_rate, cfg.weight_decay);
            }
            ++rec.steps;
            if (cfg.max_steps > 0 && rec.steps >= cfg.max_steps) stop = true;
        }
        if (rec.diverged) break;
    }
    for (const auto& p : params) p.tensor->grad.reset();

    if (!rec.diverged) {
        rec.final_train_acc = accuracy(model, train_set, loss);
        rec.final_test_acc = accuracy(model, test_set, loss);
    }
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

RunRecord train(Adaptation& adaptation, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
                const Loss& loss) {
    RunRecord rec = train(static_cast<Adaptable&>(adaptation), train_set, test_set, cfg, loss);
    const PromptSpec& s = adaptation.spec();
    rec.method = to_string(s.method);
    rec.site = s.method == Method::ap ? s.site : (s.method == Method::norm_tune || s.method == Method::linear_probe)
                                                      ? std::string("none")
                                                      : std::string("site_0");
    rec.shape_mode = to_string(s.shape_mode);
    return rec;
}

}  // namespace aplab::prompting
