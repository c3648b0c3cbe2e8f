#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aplab/analysis.hpp"
#include "aplab/theory.hpp"

// Shared experiment drivers used by the command-line tool and the acceptance runner.
namespace aplab::experiments {

// ---------------------------------------------------------------------------
// Finite-difference suite over every differentiable op.

struct OpCheck {
    std::string name;
    std::size_t instances = 0;
    /// Draws rejected because a relu or hinge input sat within kink_margin of its kink.
    std::size_t rejected = 0;
    double worst_rel_error = 0.0;
    double tolerance = 1e-6;
    bool pass() const { return instances > 0 && worst_rel_error < tolerance; }
};

struct GradcheckSuiteConfig {
    std::uint64_t seed = 0;
    std::size_t instances = 100;
    double step = 1e-5;
    double kink_margin = 1e-4;
    /// Appends an op whose backward is deliberately wrong; it must fail.
    bool negative_control = false;
    std::size_t jobs = 1;
};

std::vector<OpCheck> gradcheck_suite(const GradcheckSuiteConfig& cfg);
std::vector<std::string> gradcheck_op_names();

// ---------------------------------------------------------------------------
// Norm-Tune equivalence draws.

struct EquivalenceSummary {
    nn::Arch arch = nn::Arch::cnn;
    std::size_t draws = 0;
    double max_discrepancy = 0.0;
    /// Discrepancy with delta = 0 on the first draw's model and batch.
    double zero_prompt_discrepancy = 0.0;
};

/// The defaults satisfy every precondition; the switches exist to exercise the
/// checker's error path.
struct EquivalenceOptions {
    std::size_t draws = 50;
    /// CNN kernel size; 0 alternates 1x1 and 3x3.
    std::size_t cnn_kernel = 0;
    Padding cnn_padding = Padding::circular;
    /// false draws a delta that varies over space (CNN) or tokens (ViT).
    bool shared_delta = true;
    /// false draws ViT batches with unequal per-token moments.
    bool equal_moments = true;
};

/// CNN: toy CNNs, per-channel delta, sites 1..4.
/// ViT: toy ViTs, token-shared delta, batches with equal per-token moments.
/// Precondition violations propagate as analysis::PreconditionError.
EquivalenceSummary equivalence_draws(nn::Arch arch, std::uint64_t seed, const EquivalenceOptions& opts = {});

// ---------------------------------------------------------------------------
// Parameter counts against closed forms.

struct ParamCountRow {
    std::string model;
    std::string method;
    std::string shape_mode;
    std::string site;
    std::size_t counted = 0;
    std::size_t expected = 0;
};

/// Every method and site of the default toy CNN (3x8x8 input) and toy ViT (4x8 tokens).
std::vector<ParamCountRow> param_count_table();

// ---------------------------------------------------------------------------
// Layer-preference tasks.

/**
 * Images [n,C,S,S] holding one cosine grating per sample with a random
 * orientation (rows or columns), phase and per-channel amplitude, plus
 * Gaussian noise. Label 0 draws frequency `low_freq` cycles per image,
 * label 1 draws low_freq + 1, so the label is the parity of the dominant
 * low-frequency component relative to low_freq.
 */
struct GratingTaskSpec {
    std::size_t size = 8;
    std::size_t channels = 3;
    std::size_t low_freq = 1;
    double amplitude = 1.0;
    double noise = 0.5;
};

prompting::Dataset grating_dataset(const GratingTaskSpec& spec, std::size_t n, std::uint64_t seed);

/// Theory-model samples with labels mapped to {0: y = -1, 1: y = +1}.
prompting::Dataset theory_token_dataset(const theory::SyntheticTaskSpec& spec, const theory::PatternBasis& basis,
                                        std::size_t n, std::uint64_t seed);

/// Full-model training (all parameters, BatchNorm in train mode) with cross-entropy.
/// Returns the mean loss of the last epoch.
double pretrain(nn::LayeredModel& model, const prompting::Dataset& data, const prompting::TrainConfig& cfg);

struct LayerPreferenceConfig {
    nn::Arch arch = nn::Arch::cnn;
    std::size_t seeds = 5;
    std::uint64_t base_seed = 0;
    std::size_t n_train = 128;
    std::size_t n_test = 1000;

    // CNN: backbone trained on `source`, prompts adapted on `target`.
    GratingTaskSpec source;
    GratingTaskSpec target;
    std::size_t pretrain_samples = 1024;
    prompting::TrainConfig pretrain_train;

    // ViT: random backbone, theory tokens.
    theory::SyntheticTaskSpec tokens;
    std::uint64_t basis_seed = 7;

    analysis::LayerSweepConfig sweep;
};

LayerPreferenceConfig default_layer_preference(nn::Arch arch);

struct LayerPreferenceRun {
    std::size_t seed_index = 0;
    double pretrain_loss = 0.0;
    analysis::LayerSweepResult sweep;
    /// argmax site lies in the deeper half (CNN) or the shallower half (ViT).
    bool expected_half = false;
};

/// Site s is in the deeper half when 2s >= n; an odd middle site counts as shallower.
bool in_deeper_half(std::size_t site, std::size_t num_sites);

std::vector<LayerPreferenceRun> layer_preference(const LayerPreferenceConfig& cfg);

}  // namespace aplab::experiments
