#include <cassert>

#include "aplab/autodiff.hpp"

namespace aplab {

const Tensor& Var::value() const {
    if (!tape_) throw AutodiffError("use of an empty Var");
    return tape_->value_of(id_);
}

Tape& Var::tape() const {
    if (!tape_) throw AutodiffError("use of an empty Var");
    return *tape_;
}

bool Var::needs_grad() const { return tape().needs_grad_of(id_); }

void Tape::check_owned(const Var& v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) throw AutodiffError("variable does not belong to this tape");
}

Var Tape::leaf(Tensor& t) {
    if (backward_done_) throw AutodiffError("tape already differentiated; reset() before recording");
    Node n;
    n.value = Tensor(t.shape, t.data);
    n.leaf = &t;
    n.needs_grad = t.requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
    if (backward_done_) throw AutodiffError("tape already differentiated; reset() before recording");
    Node n;
    n.value = std::move(t);
    n.value.requires_grad = false;
    n.value.grad.reset();
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (backward_done_) throw AutodiffError("tape already differentiated; reset() before recording");
    Node n;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) {
        check_owned(in);
        n.inputs.push_back(in.id_);
        n.needs_grad = n.needs_grad || nodes_[in.id_].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_accumulator(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_ready) {
        n.grad.assign(n.value.size(), 0.0);
        n.grad_ready = true;
    }
    return n.grad;
}

void Tape::backward(Var root) {
    check_owned(root);
    if (backward_done_) throw AutodiffError("backward() called twice on the same tape without reset()");
    if (root.size() != 1) throw AutodiffError("backward() needs a scalar root, got shape " + shape_str(root.shape()));
    backward_done_ = true;
    if (!nodes_[root.id_].needs_grad) return;

    grad_accumulator(root.id_)[0] = 1.0;
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.grad_ready || !n.needs_grad) continue;
        for (auto in : n.inputs) {
            assert(in < i && "tape order violated");
            (void)in;
        }
        if (n.backward) n.backward(*this, i);
        if (n.leaf && n.leaf->requires_grad) {
            auto& g = n.leaf->grad;
            if (!g) {
                g = n.grad;
            } else {
                for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += n.grad[k];
            }
        }
    }
}

bool Tape::has_grad(Var v) const {
    check_owned(v);
    return nodes_[v.id_].grad_ready;
}

const std::vector<double>& Tape::grad(Var v) const {
    check_owned(v);
    if (!nodes_[v.id_].grad_ready) throw AutodiffError("node received no gradient");
    return nodes_[v.id_].grad;
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
    kink_margin_ = std::numeric_limits<double>::infinity();
}

}  // namespace aplab
