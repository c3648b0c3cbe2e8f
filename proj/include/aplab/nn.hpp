#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aplab/autodiff.hpp"

namespace aplab::nn {

inline constexpr double kNormEps = 1e-8;
inline constexpr double kBatchNormMomentum = 0.1;

// ---------------------------------------------------------------------------
// Functional layers. Image activations are [B,C,H,W]; token activations are
// feature-major [B,D,P] (or [D,P] for a single sample).

/// x [B,in] -> [B,out] with w [out,in], b [out].
Var linear(Var x, Var w, Var b);
/// Per-token affine map: z [B,in,P] -> [B,out,P] with w [out,in], b [out].
Var token_linear(Var z, Var w, Var b);
/// Per-token two-layer perceptron w2 relu(w1 z + b1) + b2.
Var token_mlp(Var z, Var w1, Var b1, Var w2, Var b2);

/// Expands a per-channel vector [C] to [C,H,W] (for suffix broadcasting).
Var channel_expand(Var v, std::size_t h, std::size_t w);

struct BatchNormState {
    Tensor running_mean;
    Tensor running_var;
    double momentum = kBatchNormMomentum;
    double eps = kNormEps;
    /// Channels whose batch variance fell below eps (degenerate batches).
    std::size_t degenerate_channels = 0;
};

/**
 * BatchNorm over [B,C,H,W] with per-channel statistics over batch and
 * spatial axes. Training mode normalizes with batch statistics and updates
 * the running averages in `state`; eval mode uses the running averages.
 */
Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, bool training);

/// gamma_d (z - mu) / sqrt(var + eps) + beta_d over the feature axis (axis -2) of tokens.
Var layernorm(Var z, Var gamma, Var beta, double eps = kNormEps);

struct AttentionOutput {
    Var out;
    /// attn[j,k]: weight of key j for query k; columns sum to one.
    Var attn;
};

/// Single-head attention on Z [D,P] or [B,D,P]: scores (W_K z_j)^T (W_Q z_k) * scale,
/// softmax over keys j, out column k = sum_j W_V z_j attn[j,k].
AttentionOutput attention_block(Var z, Var wq, Var wk, Var wv, double scale = 1.0);

/// relu(BN(conv(z; w))).
Var conv_bn_relu_block(Var z, Var w, Var gamma, Var beta, BatchNormState& state, bool training,
                       Padding padding = Padding::circular);

// ---------------------------------------------------------------------------
// Two-layer attention + perceptron model with scalar output, prompt at layer h.

struct TwoLayerVitParams {
    // Layer 1 acts on d-dim tokens, layer 2 on m-dim tokens.
    Tensor wq1, wk1, wv1;  // [d,d]
    Tensor perm1;          // [P,P] token permutation applied to keys and values
    Tensor wo1, wu1;       // [m,d], [m,m]
    Tensor wq2, wk2, wv2;  // [m,m]
    Tensor perm2;          // [P,P]
    Tensor wo2, wu2;       // [m,m]
    Tensor a;              // [m] output weights, shared by every token
};

struct TwoLayerVitOutput {
    Var score;  // [] for a single sample, [B] for a batch
    Var attn1;
    Var attn2;
    Var z;  // layer-1 token features after any h=2 prompt
};

/// Leaves (or constants) for TwoLayerVitParams on one tape.
struct TwoLayerVitVars {
    Var wq1, wk1, wv1, perm1, wo1, wu1, wq2, wk2, wv2, perm2, wo2, wu2, a;
};
TwoLayerVitVars bind_constants(Tape& tape, const TwoLayerVitParams& p);

/**
 * x: [d,P] or [B,d,P]. `delta` is added to the input tokens (h = 1, shape
 * [d,P]) or to the layer-1 outputs (h = 2, shape [m,P]); pass an invalid Var
 * for no prompt.
 */
TwoLayerVitOutput two_layer_vit_forward(Var x, const TwoLayerVitVars& params, int h, Var delta);

// ---------------------------------------------------------------------------
// Hookable layered model.

enum class Arch { cnn, vit };
enum class BlockKind { conv2d, conv_bn_relu, patch_embed, transformer, head };

std::string to_string(Arch a);
std::string to_string(BlockKind k);

/**
 * One stage of a LayeredModel. Parameters are keyed by name; iteration order
 * of the map fixes the parameter order everywhere (optimizers, manifests).
 */
struct LayerBlock {
    BlockKind kind = BlockKind::conv2d;
    std::string name;
    std::map<std::string, Tensor> params;
    bool frozen = true;

    Padding padding = Padding::circular;  // conv2d, conv_bn_relu
    std::size_t kernel = 1;               // conv2d, conv_bn_relu
    std::size_t patch = 0;                // patch_embed: 0 means the input is already tokens
    double attn_scale = 1.0;              // transformer
    BatchNormState bn;                    // conv_bn_relu

    std::size_t param_count() const;
};

/**
 * Ordered blocks with hook sites. site_i is the input of blocks[i], so site_0
 * is the model input and the last site is the input of the head.
 */
struct LayeredModel {
    Arch arch = Arch::cnn;
    std::vector<LayerBlock> blocks;
    std::size_t num_classes = 2;
    /// ViT only: a prompt at a transformer block's site is added after the
    /// block's first LayerNorm instead of at the block input.
    bool inject_after_norm = false;

    std::size_t num_sites() const { return blocks.size(); }
    std::vector<std::string> site_names() const;
    /// Parses "site_<i>"; throws std::invalid_argument for unknown sites.
    std::size_t site_index(const std::string& site) const;
    std::size_t param_count() const;
    /// Sum of normalization widths (BatchNorm channels, LayerNorm features).
    std::size_t norm_width_total() const;
    /// Number of (gamma, beta) pairs.
    std::size_t norm_layer_count() const;

    void set_requires_grad(bool on);
    void zero_grad();
};

std::string site_name(std::size_t i);

struct Prompt {
    std::size_t site = 0;
    /// Broadcastable against the per-sample activation shape at `site`
    /// (trailing-suffix rule); typically exactly that shape.
    Var delta;
};

enum class Mode { eval, train };

struct ForwardOptions {
    Mode mode = Mode::eval;
    std::optional<Prompt> prompt;
    /// Start at this site with `x` being the activation there (used to run the
    /// tail of a model on a given activation batch).
    std::size_t start_site = 0;
};

struct ForwardResult {
    Var logits;
    /// Activation at each site visited (after prompt injection), indexed by site.
    std::vector<Var> activations;
    /// Attention matrices [B,P,P] of each transformer block, in order.
    std::vector<Var> attention;
};

/**
 * Runs the model. Parameters are registered as tape leaves, so tensors with
 * requires_grad receive gradients on backward; everything else behaves as a
 * constant. Mode::train uses batch statistics in BatchNorm and updates the
 * running averages.
 */
ForwardResult forward(LayeredModel& model, Tape& tape, Var x, const ForwardOptions& opts = {});

/// Per-sample activation shape at every site for inputs of per-sample shape `input_shape`.
std::vector<Shape> site_shapes(LayeredModel& model, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Toy architectures.

struct ToyCnnConfig {
    std::size_t in_channels = 3;
    std::size_t channels = 8;
    std::size_t blocks = 4;
    std::size_t kernel = 3;
    std::size_t num_classes = 2;
    Padding padding = Padding::circular;
};

/// stem 1x1 conv -> `blocks` x conv_bn_relu -> global average pool -> linear head.
LayeredModel build_toy_cnn(const ToyCnnConfig& cfg, std::uint64_t seed);

struct ToyVitConfig {
    /// Channels of an image input, or token dimension when patch == 0.
    std::size_t in_channels = 4;
    /// Tokens per sample (image area / patch area for image inputs).
    std::size_t tokens = 8;
    std::size_t patch = 0;
    std::size_t width = 16;
    std::size_t mlp_hidden = 32;
    std::size_t blocks = 4;
    std::size_t num_classes = 2;
    bool inject_after_norm = false;
};

/// token embedding (+ positional) -> `blocks` pre-norm transformer blocks -> mean pool -> linear head.
LayeredModel build_toy_vit(const ToyVitConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Parameter manifests: JSON with every named array, its shape, and the
// BatchNorm running statistics. Serialization is byte-stable.

std::string save_params_json(const LayeredModel& model);
LayeredModel load_params_json(const std::string& text);
void save_params(const LayeredModel& model, const std::string& path);
LayeredModel load_params(const std::string& path);

}  // namespace aplab::nn
