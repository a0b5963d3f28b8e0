/**
 * @file losses.hpp
 * @brief Forward values of the training objective on labeled batches.
 *
 * Contains:
 * - LabeledBatch, LossConfig
 * - sample_batch: deterministic m-per-class sampler (P classes x K instances)
 * - triplet_loss_batch_hard: hardest positive / hardest negative hinge
 * - circle_loss: pairwise form with self-paced weights, log-sum-exp stabilized
 * - combined_loss: circle + triplet, weighted 1:1
 *
 * Triplet distances are Euclidean on the embeddings as given; circle
 * similarities are cosine on internally normalized copies. Reductions run in
 * ascending index order so values are stable across thread counts.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "vocreid/rng.hpp"
#include "vocreid/types.hpp"

namespace vocreid {

// =============================================================================
// Batch types
// =============================================================================

struct LabeledBatch {
    std::size_t size = 0;
    std::size_t dims = 0;
    std::vector<double> embeddings;    // size x dims, row-major
    std::vector<std::int64_t> labels;  // size entries
    std::size_t classes_per_batch = 0;  // P
    std::size_t instances_per_class = 0;  // K

    const double* row(std::size_t i) const { return embeddings.data() + i * dims; }

    void validate() const {
        if (size == 0 || dims == 0)
            throw Error(ErrorCategory::Validation, "empty batch");
        if (embeddings.size() != size * dims || labels.size() != size)
            throw Error(ErrorCategory::Validation, "batch shape mismatch");
        if (classes_per_batch * instances_per_class != size)
            throw Error(ErrorCategory::Validation, "batch size is not P*K");
        std::map<std::int64_t, std::size_t> counts;
        for (auto l : labels) ++counts[l];
        if (counts.size() != classes_per_batch)
            throw Error(ErrorCategory::Validation,
                        "batch does not contain exactly P distinct labels");
        for (const auto& [label, count] : counts)
            if (count != instances_per_class)
                throw Error(ErrorCategory::Validation,
                            "label " + std::to_string(label) +
                                " does not appear exactly K times");
    }
};

struct LossConfig {
    double circle_scale = 64.0;   // gamma
    double circle_margin = 0.35;  // relaxation m
    double triplet_margin = 0.3;

    void validate() const {
        if (!(circle_scale > 0.0))
            throw Error(ErrorCategory::Config, "circle_scale must be > 0");
        if (!(circle_margin > 0.0) || !(circle_margin < 1.0))
            throw Error(ErrorCategory::Config, "circle_margin must be in (0,1)");
        if (triplet_margin < 0.0)
            throw Error(ErrorCategory::Config, "triplet_margin must be >= 0");
    }
};

// =============================================================================
// m-per-class sampler
// =============================================================================

/// Draws P distinct vehicle ids, then K instances per id (with replacement
/// when an id has fewer than K images). Deterministic for a fixed seed.
inline LabeledBatch sample_batch(const Dataset& dataset, std::size_t classes,
                                 std::size_t instances, std::uint64_t seed) {
    if (classes == 0 || instances == 0)
        throw Error(ErrorCategory::Config, "P and K must be >= 1");

    // label -> item indices, keys ascending for a stable class order
    std::map<std::int64_t, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        by_label[dataset.meta()[i].vehicle_id].push_back(i);
    if (by_label.size() < classes)
        throw Error(ErrorCategory::Validation,
                    "dataset has " + std::to_string(by_label.size()) +
                        " classes, sampler needs " + std::to_string(classes));

    std::vector<std::int64_t> class_ids;
    class_ids.reserve(by_label.size());
    for (const auto& [label, items] : by_label) class_ids.push_back(label);

    Rng rng(seed);
    // partial Fisher-Yates: first P slots become the chosen classes
    for (std::size_t i = 0; i < classes; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(
                                      rng.next_below(class_ids.size() - i));
        std::swap(class_ids[i], class_ids[j]);
    }

    const EmbeddingMatrix& features = dataset.branch(Branch::vehicle);
    LabeledBatch batch;
    batch.size = classes * instances;
    batch.dims = features.dims();
    batch.classes_per_batch = classes;
    batch.instances_per_class = instances;
    batch.embeddings.reserve(batch.size * batch.dims);
    batch.labels.reserve(batch.size);

    for (std::size_t c = 0; c < classes; ++c) {
        const auto& pool = by_label[class_ids[c]];
        std::vector<std::size_t> chosen;
        chosen.reserve(instances);
        if (pool.size() >= instances) {
            std::vector<std::size_t> order = pool;
            for (std::size_t i = 0; i < instances; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(
                                              rng.next_below(order.size() - i));
                std::swap(order[i], order[j]);
                chosen.push_back(order[i]);
            }
        } else {
            for (std::size_t i = 0; i < instances; ++i)
                chosen.push_back(
                    pool[static_cast<std::size_t>(rng.next_below(pool.size()))]);
        }
        for (std::size_t item : chosen) {
            for (float v : features.row(item))
                batch.embeddings.push_back(static_cast<double>(v));
            batch.labels.push_back(class_ids[c]);
        }
    }
    return batch;
}

// =============================================================================
// Batch-hard triplet loss
// =============================================================================

namespace detail {

inline double euclidean(const double* a, const double* b, std::size_t dims) {
    double sum = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
        const double diff = a[d] - b[d];
        sum += diff * diff;
    }
    return std::sqrt(sum);
}

// log(1 + e^x) without overflow
inline double softplus(double x) {
    return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

}  // namespace detail

/// Mean over anchors of max(0, d(hardest positive) - d(hardest negative)
/// + margin) with Euclidean distances. Every anchor needs at least one
/// positive (same label, different index) and one negative.
inline double triplet_loss_batch_hard(const LabeledBatch& batch, double margin) {
    batch.validate();
    if (margin < 0.0)
        throw Error(ErrorCategory::Config, "triplet margin must be >= 0");

    double total = 0.0;
    for (std::size_t a = 0; a < batch.size; ++a) {
        double hardest_pos = -1.0;
        double hardest_neg = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < batch.size; ++j) {
            if (j == a) continue;
            const double d = detail::euclidean(batch.row(a), batch.row(j),
                                               batch.dims);
            if (batch.labels[j] == batch.labels[a])
                hardest_pos = std::max(hardest_pos, d);
            else
                hardest_neg = std::min(hardest_neg, d);
        }
        if (hardest_pos < 0.0)
            throw Error(ErrorCategory::Validation,
                        "anchor " + std::to_string(a) + " has no positive");
        if (!std::isfinite(hardest_neg))
            throw Error(ErrorCategory::Validation,
                        "anchor " + std::to_string(a) + " has no negative");
        total += std::max(0.0, hardest_pos - hardest_neg + margin);
    }
    return total / static_cast<double>(batch.size);
}

// =============================================================================
// Circle loss (pairwise form)
// =============================================================================

/// log(1 + sum_n exp(g*a_n*(s_n - D_n)) * sum_p exp(-g*a_p*(s_p - D_p)))
/// with a_p = max(0, 1 + m - s_p), a_n = max(0, s_n + m), D_p = 1 - m,
/// D_n = m. Pairs whose self-paced weight clamps to zero drop out of their
/// sum entirely; if a whole sum empties the loss is exactly zero.
/// Both sums are evaluated through log-sum-exp.
inline double circle_loss(const LabeledBatch& batch, const LossConfig& config) {
    batch.validate();
    config.validate();

    // cosine similarities need unit rows; normalize an internal copy
    std::vector<double> unit(batch.embeddings);
    for (std::size_t i = 0; i < batch.size; ++i) {
        double* row = unit.data() + i * batch.dims;
        double norm_sq = 0.0;
        for (std::size_t d = 0; d < batch.dims; ++d)
            norm_sq += row[d] * row[d];
        if (norm_sq == 0.0)
            throw Error(ErrorCategory::Validation,
                        "zero-norm embedding in circle loss batch");
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (std::size_t d = 0; d < batch.dims; ++d) row[d] *= inv;
    }

    const double gamma = config.circle_scale;
    const double m = config.circle_margin;
    const double delta_p = 1.0 - m;
    const double delta_n = m;

    std::vector<double> pos_exponents;
    std::vector<double> neg_exponents;
    bool saw_pos_pair = false, saw_neg_pair = false;
    for (std::size_t i = 0; i < batch.size; ++i) {
        for (std::size_t j = i + 1; j < batch.size; ++j) {
            double s = 0.0;
            const double* a = unit.data() + i * batch.dims;
            const double* b = unit.data() + j * batch.dims;
            for (std::size_t d = 0; d < batch.dims; ++d) s += a[d] * b[d];
            if (batch.labels[i] == batch.labels[j]) {
                saw_pos_pair = true;
                const double alpha = std::max(0.0, 1.0 + m - s);
                if (alpha > 0.0)
                    pos_exponents.push_back(-gamma * alpha * (s - delta_p));
            } else {
                saw_neg_pair = true;
                const double alpha = std::max(0.0, s + m);
                if (alpha > 0.0)
                    neg_exponents.push_back(gamma * alpha * (s - delta_n));
            }
        }
    }
    if (!saw_pos_pair)
        throw Error(ErrorCategory::Validation, "batch has no positive pairs");
    if (!saw_neg_pair)
        throw Error(ErrorCategory::Validation, "batch has no negative pairs");
    if (pos_exponents.empty() || neg_exponents.empty()) return 0.0;

    auto log_sum_exp = [](const std::vector<double>& xs) {
        double peak = xs[0];
        for (double x : xs) peak = std::max(peak, x);
        double sum = 0.0;
        for (double x : xs) sum += std::exp(x - peak);
        return peak + std::log(sum);
    };
    return detail::softplus(log_sum_exp(neg_exponents) +
                            log_sum_exp(pos_exponents));
}

/// Circle + triplet with 1:1 coefficients.
inline double combined_loss(const LabeledBatch& batch, const LossConfig& config) {
    return circle_loss(batch, config) +
           triplet_loss_batch_hard(batch, config.triplet_margin);
}

}  // namespace vocreid
