#include <cmath>
#include <cstdlib>
#include <limits>

#include "aplab/analysis.hpp"

namespace aplab::analysis {

AttentionRecord AttentionRecord::from_queries_keys(const Tensor& queries, const Tensor& keys, std::size_t layer) {
    if (queries.rank() != 2 || queries.shape != keys.shape) {
        throw DimensionError("attention record: queries " + shape_str(queries.shape) + " and keys " +
                             shape_str(keys.shape) + " must both be [D,P]");
    }
    const std::size_t d = queries.shape[0], p = queries.shape[1];
    AttentionRecord rec;
    rec.layer = layer;
    rec.scores = Tensor(Shape{p, p});
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t k = 0; k < p; ++k) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += keys.data[c * p + j] * queries.data[c * p + k];
            rec.scores.data[j * p + k] = s;
        }
    }
    return rec;
}

namespace {

std::size_t index_distance(std::size_t a, std::size_t b, std::size_t p, DistanceKind kind) {
    const std::size_t d = a > b ? a - b : b - a;
    return kind == DistanceKind::circular ? std::min(d, p - d) : d;
}

double distance_of(const double* s, std::size_t p, const AttentionDistanceOptions& opts) {
    double total = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < p; ++j) best = std::max(best, s[j * p + k]);
        const double window = opts.tie_tolerance * std::abs(best);
        std::size_t chosen = p;
        std::size_t chosen_dist = 0;
        for (std::size_t j = 0; j < p; ++j) {
            if (best - s[j * p + k] > window) continue;
            const std::size_t dist = index_distance(j, k, p, opts.distance);
            if (chosen == p) {
                chosen = j;
                chosen_dist = dist;
                if (opts.ties == TiePolicy::smallest_index) break;
            } else if (dist < chosen_dist) {
                chosen = j;
                chosen_dist = dist;
            }
        }
        total += static_cast<double>(chosen_dist);
    }
    return total / static_cast<double>(p);
}

}  // namespace

double avg_attention_distance(const Tensor& scores, const AttentionDistanceOptions& opts) {
    if (scores.rank() != 2 || scores.shape[0] != scores.shape[1]) {
        throw DimensionError("attention distance: scores must be [P,P], got " + shape_str(scores.shape));
    }
    scores.check_finite("attention scores");
    return distance_of(scores.data.data(), scores.shape[0], opts);
}

double avg_attention_distance(const AttentionRecord& rec, const AttentionDistanceOptions& opts) {
    return avg_attention_distance(rec.scores, opts);
}

double batch_attention_distance(const Tensor& attn, const AttentionDistanceOptions& opts) {
    if (attn.rank() == 2) return avg_attention_distance(attn, opts);
    if (attn.rank() != 3 || attn.shape[1] != attn.shape[2]) {
        throw DimensionError("attention distance: expected [B,P,P], got " + shape_str(attn.shape));
    }
    attn.check_finite("attention scores");
    const std::size_t b = attn.shape[0], p = attn.shape[1];
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) total += distance_of(attn.data.data() + i * p * p, p, opts);
    return total / static_cast<double>(b);
}

}  // namespace aplab::analysis
