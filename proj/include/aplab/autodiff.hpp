#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "aplab/tensor.hpp"

namespace aplab {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    std::size_t size() const { return value().size(); }
    double item() const { return value().item(); }

    std::size_t id() const { return id_; }
    Tape& tape() const;
    bool valid() const { return tape_ != nullptr; }
    /// True when some leaf with requires_grad feeds into this value.
    bool needs_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/**
 * Ordered record of primitive operations for one forward/backward pass.
 *
 * Nodes are appended in creation order, so every input id is smaller than
 * the id of the node that consumes it. backward() walks the nodes in exact
 * reverse creation order. A tape supports a single backward pass; call
 * reset() to reuse it.
 */
class Tape {
public:
    /// Receives the tape and the id of the node being differentiated; the
    /// node's output gradient is available through grad_of(id).
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Records `t` as a leaf. When t.requires_grad is set, backward() writes
    /// the accumulated gradient into t.grad, so `t` must outlive backward().
    Var leaf(Tensor& t);
    /// Records an owned value that never receives gradient.
    Var constant(Tensor t);

    /// Appends an operation node. `inputs` must all belong to this tape.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    void backward(Var root);

    bool backward_done() const { return backward_done_; }
    /// Whether backward() propagated a gradient into this node.
    bool has_grad(Var v) const;
    /// Gradient buffer of a node; throws if the node never received one.
    const std::vector<double>& grad(Var v) const;

    std::size_t size() const { return nodes_.size(); }
    void reset();

    /// Smallest |x| fed to a non-smooth primitive (relu) since the last reset;
    /// +inf when none. Finite-difference checks use it to avoid kinks.
    double kink_margin() const { return kink_margin_; }
    void note_kink_distance(double d) { kink_margin_ = std::min(kink_margin_, d); }

    // Used by backward closures.
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }
    std::size_t input_id(std::size_t node, std::size_t k) const { return nodes_[node].inputs[k]; }
    bool needs_grad_of(std::size_t id) const { return nodes_[id].needs_grad; }
    /// Zero-initialized on first access during backward.
    std::span<double> grad_accumulator(std::size_t id);

private:
    friend class Var;

    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        Tensor* leaf = nullptr;
        bool needs_grad = false;
        bool grad_ready = false;
        std::vector<double> grad;
    };

    void check_owned(const Var& v) const;

    // deque: values handed out by reference stay put while the tape grows.
    std::deque<Node> nodes_;
    bool backward_done_ = false;
    double kink_margin_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Primitive operations. Binary elementwise ops accept equal shapes, or a
// right operand whose shape is a trailing suffix of the left operand's shape
// (add and mul also accept the mirrored case).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var neg(Var a);

Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);

/// [m,k]x[k,n], [B,m,k]x[B,k,n], [B,m,k]x[k,n] and [m,k]x[B,k,n].
Var matmul(Var a, Var b);
/// Swaps the last two axes.
Var transpose(Var a);
Var permute(Var a, std::vector<std::size_t> axes);
Var reshape(Var a, Shape shape);

/// Max-subtracted softmax along `axis`.
Var softmax(Var a, int axis);

Var sum(Var a, int axis);
Var mean(Var a, int axis);
/// Population variance (divide by count) along `axis`.
Var var(Var a, int axis);
Var sum_all(Var a);
Var mean_all(Var a);

/// Inserts a new axis at `axis` holding `n` copies of the input.
Var broadcast_axis(Var a, int axis, std::size_t n);

enum class Padding { zero, circular };

/// Stride-1 "same" convolution. x: [B,Cin,H,W], w: [Cout,Cin,kh,kw] with odd kernel extents.
Var conv2d(Var x, Var w, Padding padding);

/// Bilinear resize of [B,C,H,W] to [B,C,out_h,out_w] with half-pixel centers.
Var resize_bilinear(Var x, std::size_t out_h, std::size_t out_w);

/**
 * Places `center` ([B,C,h,w]) in the middle of a [B,C,H,W] canvas whose
 * remaining frame pixels come from `frame` ([C, H*W - h*w], row-major scan
 * order of the frame pixels, shared across the batch).
 */
Var frame_compose(Var frame, Var center, std::size_t out_h, std::size_t out_w);

/// Mean softmax cross-entropy of logits [B,C] against integer labels.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace aplab
