#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "aplab/analysis.hpp"
#include "aplab/prompting.hpp"

namespace aplab::theory {

struct SyntheticTaskSpec {
    std::size_t P = 8;
    std::size_t d = 4;
    /// Noise standard deviation; negative means noise_c / P.
    double sigma = -1.0;
    double noise_c = 0.5;
    double zeta = -0.5;
    std::size_t d_A = 1;
    std::size_t n_train = 512;
    std::size_t n_test = 2000;
    std::uint64_t seed = 0;

    double noise() const { return sigma < 0.0 ? noise_c / static_cast<double>(P) : sigma; }
    void validate() const;
};

/// v1..v4 as rows of a [4,d] tensor.
struct PatternBasis {
    Tensor v;
    std::vector<double> pattern(std::size_t i) const;
};

/// v1, v2, u, w orthonormal (random orientation from `seed`); v3, v4 = cos(phi/2) u +- sin(phi/2) w, cos phi = zeta.
PatternBasis gen_pattern_basis(std::size_t d, double zeta, std::uint64_t seed);

/// One sample [d,P]: v1 (y = +1) or v2 (y = -1) at a uniform position, v3/v4 fair coin elsewhere, plus noise.
/// `discriminative_pos`, when given, receives the position of the label token.
Tensor gen_sample(const SyntheticTaskSpec& spec, const PatternBasis& basis, int y, std::mt19937_64& rng,
                  std::size_t* discriminative_pos = nullptr);

/// n samples with fair-coin labels +1 / -1, stacked as [n,d,P].
prompting::Dataset gen_dataset(const SyntheticTaskSpec& spec, const PatternBasis& basis, std::size_t n,
                               std::mt19937_64& rng);

/// [P,P] matrix whose right action moves token (k + s) mod P to column k.
Tensor cyclic_shift(std::size_t p, std::size_t s);

struct ConstructedViT {
    PatternBasis basis;
    std::size_t m = 16;
    double beta1 = 1.0;
    double beta2 = 1.0;
    std::size_t shift1 = 1;
    std::size_t shift2 = 1;
    nn::TwoLayerVitParams params;
};

/// The pretrained two-layer model: layer-1 perceptron rows are m/4 copies of
/// each pattern, layer-2 rows m/4 copies of each unit group indicator e_i,
/// keys/values see tokens cyclically shifted by d_A (layer 1) and shift2 (layer 2).
ConstructedViT build_constructed_vit(const SyntheticTaskSpec& spec, const PatternBasis& basis, std::size_t m = 16,
                                     double beta1 = 1.0, double beta2 = 1.0, std::size_t shift2 = 1);

/// max(0, 1/P - y * score).
double hinge_loss(double score, int y, std::size_t P);
Var hinge_loss(Var score, int y, std::size_t P);

/// Only the prompt is trainable; forward returns scores [B].
class TheoryPrompt : public prompting::Adaptable {
public:
    TheoryPrompt(const ConstructedViT& model, int h, std::size_t P);

    std::vector<prompting::NamedParam> trainables() override { return {{"delta", &delta_}}; }
    Var forward(Tape& tape, Var x) override;

    Tensor& delta() { return delta_; }
    int layer() const { return h_; }

private:
    const ConstructedViT* model_;
    int h_;
    Tensor delta_;
};

struct TheoryRun {
    prompting::RunRecord record;
    Tensor delta;
};

struct TheoryTrainConfig {
    double learning_rate = 0.5;
    std::size_t batch_size = 16;
    std::size_t steps = 2000;
    /// When nonzero, train for this many passes over the data, still capped at `steps`.
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
};

/// SGD on the hinge loss over `steps` minibatch steps (or `epochs` passes);
/// train and test data are drawn from spec.seed.
TheoryRun train_theory_prompt(const SyntheticTaskSpec& spec, const ConstructedViT& model, int h,
                              const TheoryTrainConfig& cfg);

/// Per-P training budget for the sweep: `epochs` passes over the N samples
/// (so the step count grows with N), capped at `steps`.
struct TheoryProtocol {
    std::size_t P = 8;
    double learning_rate = 1.0;
    std::size_t steps = 20000;
    std::size_t epochs = 8;
};

/// Default budget: learning rate P/8, 8 epochs, at most 20000 steps.
TheoryProtocol default_protocol(std::size_t P);

struct SweepConfig {
    std::vector<std::size_t> P_list{8, 16, 32};
    std::vector<int> h_list{1, 2};
    std::size_t seeds = 5;
    std::uint64_t base_seed = 0;
    std::size_t log2_n_min = 4;
    std::size_t log2_n_max = 14;
    double target_acc = 0.99;
    std::size_t n_test = 2000;
    std::size_t batch_size = 16;
    std::size_t d_A = 1;
    double zeta = -0.5;
    double noise_c = 0.5;
    std::size_t m = 16;
    /// Per-P overrides; other P use default_protocol(P).
    std::vector<TheoryProtocol> protocol;
    std::size_t jobs = 1;
};

struct SweepCell {
    std::size_t P = 0;
    int h = 0;
    std::size_t seed = 0;
    /// Smallest N on the power-of-two grid reaching the target; 0 when censored.
    std::size_t N_star = 0;
    bool censored = false;
    std::size_t steps_used = 0;
    double delta_norm = 0.0;
    double test_acc_at_N_star = 0.0;
    /// Every (N, test accuracy) the bisection evaluated, in evaluation order.
    std::vector<std::pair<std::size_t, double>> probes;
};

std::vector<SweepCell> sample_complexity_sweep(const SweepConfig& cfg);

/// Median N* over seeds; censored cells count as +infinity (N* lies beyond the grid).
struct SweepSummary {
    std::size_t P = 0;
    int h = 0;
    double median_N_star = 0.0;
    std::size_t censored = 0;
};
/// median N*(h=2) / median N*(h=1) per P, in P_list order; NaN when both medians are infinite.
std::vector<double> sample_ratios(const std::vector<SweepSummary>& s, const std::vector<std::size_t>& P_list);
std::vector<SweepSummary> summarize(const std::vector<SweepCell>& cells, const SweepConfig& cfg);

struct Lemma1Result {
    double layer1 = 0.0;
    double layer2 = 0.0;
    double expected_layer1 = 0.0;
    double expected_layer2 = 0.0;
};

/// Attention-distance convention that reproduces the lemma: absolute positions,
/// ties (within 1e-9 relative) resolved to the nearest key.
analysis::AttentionDistanceOptions lemma1_distance_options();

/// Noiseless sample with v1 at position P/2 and v4 elsewhere, no prompt.
Lemma1Result verify_lemma1(const ConstructedViT& model, const SyntheticTaskSpec& spec);

}  // namespace aplab::theory
