#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "aplab/prompting.hpp"

namespace aplab::analysis {

// ---------------------------------------------------------------------------
// Average attention distance.

enum class DistanceKind { absolute, circular };
enum class TiePolicy { smallest_index, nearest_index };

struct AttentionDistanceOptions {
    DistanceKind distance = DistanceKind::absolute;
    TiePolicy ties = TiePolicy::smallest_index;
    /// Keys within tie_tolerance * |max| of the best score count as tied.
    double tie_tolerance = 0.0;
};

/// Scores of one attention layer: scores[j,k] is the score of key j for query k.
struct AttentionRecord {
    std::size_t layer = 0;
    Tensor scores;

    /// scores[j,k] = <k_j, q_k> from queries and keys stored as columns of [D,P].
    static AttentionRecord from_queries_keys(const Tensor& queries, const Tensor& keys, std::size_t layer = 0);
};

/// sum_k |k - argmax_j scores[j,k]| / P with 0-based positions.
double avg_attention_distance(const Tensor& scores, const AttentionDistanceOptions& opts = {});
double avg_attention_distance(const AttentionRecord& rec, const AttentionDistanceOptions& opts = {});

/// Mean of avg_attention_distance over the leading batch axis of [B,P,P] (or one [P,P]).
double batch_attention_distance(const Tensor& attn, const AttentionDistanceOptions& opts = {});

// ---------------------------------------------------------------------------
// Linear CKA.

class UndefinedSimilarity : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F ||Yc^T Yc||_F) with column-centered X [n,p], Y [n,q].
double linear_cka(const Tensor& x, const Tensor& y);

/// Rows: layers of A, columns: layers of B. Each activation is [n, ...], flattened per sample.
struct SimilarityMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

SimilarityMatrix cka_matrix(const std::vector<Tensor>& a, const std::vector<Tensor>& b);

// ---------------------------------------------------------------------------
// Norm-Tune parameters that reproduce an activation prompt.

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct EquivalenceResult {
    /// Affine parameters of the normalization layer that follows the site.
    Tensor gamma;
    Tensor beta;
    /// Normalization parameters used on the prompted path (unit gain, identity shift).
    Tensor ap_gamma;
    Tensor ap_beta;
    /// max |AP - NormTune| over the block output and the logits.
    double max_discrepancy = 0.0;
};

/**
 * `batch` is the activation at `site` ([B,C,H,W] or [B,D,P]); `delta` is the
 * prompt, either per-channel [C] / per-feature [D] or full per-sample shape.
 *
 * CNN: the block at the site must be conv_bn_relu with a 1x1 or circular
 * kernel and delta spatially uniform. Both paths normalize with this batch's
 * statistics of the unprompted convolution and gamma = sigma; the prompted
 * path uses beta = mu, the Norm-Tune path beta = W delta + mu.
 *
 * ViT: the block at the site must be a transformer block; the prompt enters
 * after its first LayerNorm. delta must be shared across tokens and every
 * token in the batch must have the same mean and variance. The prompted path
 * uses gamma = sigma, beta = mu; the Norm-Tune path beta = delta + mu.
 *
 * Violations raise PreconditionError naming the condition.
 */
EquivalenceResult normtune_from_ap(const nn::LayeredModel& model, std::size_t site, const Tensor& delta,
                                   const Tensor& batch);

/// Tokens [b,d,p] whose every token has mean `mu` and population variance `sigma^2`.
Tensor equal_moment_tokens(std::size_t b, std::size_t d, std::size_t p, double mu, double sigma, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Layer-preference sweep.

struct LayerSweepConfig {
    std::vector<double> lr_grid = prompting::kDefaultLrGrid;
    prompting::TrainConfig train;
    prompting::ShapeMode shape_mode = prompting::ShapeMode::full;
    bool train_head = true;
    bool include_baselines = true;  // VP and NormTune rows
    std::size_t jobs = 1;
};

struct SweepRun {
    std::string method;
    std::string site;
    double lr = 0.0;
    prompting::RunRecord record;
};

struct SiteBest {
    std::string method;
    std::string site;
    double best_lr = 0.0;
    double best_test_acc = 0.0;
    bool all_diverged = false;
};

struct LayerSweepResult {
    std::vector<SweepRun> runs;
    /// One row per AP site in order, then the VP and NormTune baselines.
    std::vector<SiteBest> best;
    /// Index of the AP site with the highest best accuracy (first on ties).
    std::size_t argmax_site = 0;
};

LayerSweepResult layer_sweep(const nn::LayeredModel& model, const prompting::Dataset& train_set,
                             const prompting::Dataset& test_set, const LayerSweepConfig& cfg);

}  // namespace aplab::analysis
