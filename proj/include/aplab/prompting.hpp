#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aplab/nn.hpp"

namespace aplab::prompting {

enum class Method { vp_additive, vp_resize_concat, ap, norm_tune, linear_probe };
enum class ShapeMode { full, shared_spatial, shared_token };

std::string to_string(Method m);
std::string to_string(ShapeMode s);
Method parse_method(const std::string& s);
ShapeMode parse_shape_mode(const std::string& s);

struct PromptSpec {
    Method method = Method::ap;
    /// Hook site for AP; VP is always site_0; ignored by NormTune and LinearProbe.
    std::string site = "site_0";
    ShapeMode shape_mode = ShapeMode::full;
    bool train_head = true;
    /// VP_resize_concat: the input image is resized to inner_h x inner_w and
    /// framed by the prompt up to the model's input size.
    std::size_t inner_h = 0;
    std::size_t inner_w = 0;

    /// Throws std::invalid_argument when the fields contradict each other.
    void validate() const;
};

enum class Optimizer { sgd, adam };

struct TrainConfig {
    Optimizer optimizer = Optimizer::adam;
    double learning_rate = 1e-2;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;
    /// Stop after this many optimizer steps (0: no cap). Lets step-budgeted
    /// experiments reuse the epoch loop.
    std::size_t max_steps = 0;
};

/// Learning-rate grid searched per method when a sweep does not supply one.
inline const std::vector<double> kDefaultLrGrid{1e-3, 3e-3, 1e-2, 3e-2, 1e-1};

inline constexpr double kDivergenceThreshold = 1e6;

enum class LossKind { cross_entropy, hinge };

struct Loss {
    LossKind kind = LossKind::cross_entropy;
    /// Hinge margin: loss = max(0, margin - y * score).
    double margin = 0.0;
};

/// Samples stacked along axis 0. Cross-entropy labels are class indices;
/// hinge labels are +1 / -1.
struct Dataset {
    Tensor x;
    std::vector<int> labels;
    std::size_t num_classes = 2;

    std::size_t size() const { return labels.size(); }
    Shape sample_shape() const { return Shape(x.shape.begin() + 1, x.shape.end()); }
    /// Rows `index` gathered into a new batch tensor.
    Tensor gather(std::span<const std::size_t> index) const;
    std::vector<int> gather_labels(std::span<const std::size_t> index) const;
};

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

/// Something train() can optimize: a set of trainable tensors and a forward map.
class Adaptable {
public:
    virtual ~Adaptable() = default;
    /// Stable order; pointers stay valid until the object is modified or moved.
    virtual std::vector<NamedParam> trainables() = 0;
    /// Logits [B,C] for cross-entropy, scores [B] for hinge.
    virtual Var forward(Tape& tape, Var x) = 0;
};

/**
 * A frozen copy of a model plus the tensors one adaptation method trains.
 * Prompts start at exactly zero; NormTune starts from the model's affine
 * parameters.
 */
class Adaptation : public Adaptable {
public:
    Adaptation(const nn::LayeredModel& model, PromptSpec spec, Shape input_shape);

    std::vector<NamedParam> trainables() override;
    Var forward(Tape& tape, Var x) override;

    const PromptSpec& spec() const { return spec_; }
    nn::LayeredModel& model() { return model_; }
    const nn::LayeredModel& model() const { return model_; }
    /// The prompt tensor (VP/AP); rank 0 placeholder otherwise.
    Tensor& delta() { return delta_; }
    bool has_delta() const { return has_delta_; }
    std::size_t site() const { return site_; }
    /// Per-sample activation shape the prompt is tiled to.
    const Shape& activation_shape() const { return activation_shape_; }
    std::size_t param_count();

private:
    /// delta materialized at the full activation (or frame) shape.
    Var tiled_delta(Tape& tape);

    nn::LayeredModel model_;
    PromptSpec spec_;
    Shape input_shape_;
    Shape activation_shape_;
    std::size_t site_ = 0;
    bool has_delta_ = false;
    Tensor delta_;
};

Adaptation build_adaptation(const nn::LayeredModel& model, const PromptSpec& spec, const Shape& input_shape);

/// Exact number of optimizer-visible scalars for `spec` on `model`.
std::size_t count_params(const PromptSpec& spec, const nn::LayeredModel& model, const Shape& input_shape);

/**
 * Frames the bilinear resize of `x` ([B,C,h,w]) to inner_h x inner_w with the
 * border prompt `delta` ([C, target_h*target_w - inner_h*inner_w]) on a
 * target_h x target_w canvas. An invalid `delta` is allowed only when the
 * frame is empty.
 */
Var resize_concat_template(Var x, Var delta, std::size_t inner_h, std::size_t inner_w, std::size_t target_h,
                           std::size_t target_w);

// ---------------------------------------------------------------------------
// Optimizers. Missing gradients count as zero.

void sgd_step(std::span<const NamedParam> params, double lr, double weight_decay = 0.0);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

void adam_step(std::span<const NamedParam> params, AdamState& state, double lr, double weight_decay = 0.0);

// ---------------------------------------------------------------------------

struct RunRecord {
    std::uint64_t seed = 0;
    std::string method;
    std::string site;
    std::string shape_mode;
    std::string optimizer;
    double learning_rate = 0.0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    double weight_decay = 0.0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    std::vector<double> losses;
    std::size_t steps = 0;
    double initial_test_acc = 0.0;
    double final_train_acc = 0.0;
    double final_test_acc = 0.0;
    std::size_t param_count = 0;
    bool diverged = false;
    double divergence_threshold = kDivergenceThreshold;
    std::vector<double> attention_distances;
    double wall_time_s = 0.0;
};

/// Fraction of samples classified correctly (argmax with lowest-index ties for
/// cross-entropy, y * score > 0 for hinge). Evaluated in chunks.
double accuracy(Adaptable& model, const Dataset& data, const Loss& loss);

/// Loss of one batch as a scalar Var.
Var batch_loss(Var output, std::span<const int> labels, const Loss& loss);

/**
 * Mini-batch ERM over the trainables: epochs x ceil(N/B) steps with a fresh
 * deterministic shuffle per epoch drawn from cfg.seed. Divergence (loss above
 * the threshold or non-finite) stops the run and sets the flag.
 */
RunRecord train(Adaptable& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
                const Loss& loss);

/// train() plus the PromptSpec fields and the parameter count of an Adaptation.
RunRecord train(Adaptation& adaptation, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg,
                const Loss& loss = {});

}  // namespace aplab::prompting
