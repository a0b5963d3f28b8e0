/**
 * @file evaluation.hpp
 * @brief mAP and CMC computation with the cross-camera ReID protocol.
 *
 * Protocol: gallery items sharing both vehicle_id and camera_id with the
 * query are excluded from evaluation; remaining same-vehicle items are
 * positives. AP uses the positive-rank form sum_i (i / r_i) / P. CMC[k] is
 * the fraction of evaluated queries whose first positive lands at rank
 * <= k+1. Score ties and equal ranks break by ascending gallery index.
 */
#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "vocreid/parallel.hpp"
#include "vocreid/types.hpp"

namespace vocreid {

// =============================================================================
// Masks
// =============================================================================

struct EvalMasks {
    std::size_t q_rows = 0;
    std::size_t g_cols = 0;
    std::vector<char> valid;     // Q x G
    std::vector<char> positive;  // Q x G, meaningful where valid

    bool is_valid(std::size_t q, std::size_t g) const {
        return valid[q * g_cols + g] != 0;
    }
    bool is_positive(std::size_t q, std::size_t g) const {
        return positive[q * g_cols + g] != 0;
    }
};

inline EvalMasks build_masks(const std::vector<ItemMeta>& meta_q,
                             const std::vector<ItemMeta>& meta_g) {
    if (meta_q.empty() || meta_g.empty())
        throw Error(ErrorCategory::Validation,
                    "build_masks needs non-empty query and gallery metadata");
    EvalMasks masks;
    masks.q_rows = meta_q.size();
    masks.g_cols = meta_g.size();
    masks.valid.assign(masks.q_rows * masks.g_cols, 1);
    masks.positive.assign(masks.q_rows * masks.g_cols, 0);
    for (std::size_t q = 0; q < masks.q_rows; ++q) {
        for (std::size_t g = 0; g < masks.g_cols; ++g) {
            const bool same_vehicle =
                meta_q[q].vehicle_id == meta_g[g].vehicle_id;
            const bool same_camera = meta_q[q].camera_id == meta_g[g].camera_id;
            const std::size_t at = q * masks.g_cols + g;
            if (same_vehicle && same_camera)
                masks.valid[at] = 0;
            else if (same_vehicle)
                masks.positive[at] = 1;
        }
    }
    return masks;
}

// =============================================================================
// Ranking
// =============================================================================

/// Orders the unmasked gallery per query, best score first. Entries carrying
/// the masked sentinel are dropped alongside mask-invalid ones.
inline RankingResult rank_gallery(const SimilarityMatrix& scores,
                                  const EvalMasks& masks) {
    if (masks.q_rows != scores.q_rows() || masks.g_cols != scores.g_cols())
        throw Error(ErrorCategory::Validation,
                    "mask shape does not match score matrix");

    const bool higher_better = scores.kind() == ScoreKind::similarity;
    RankingResult result;
    result.order.resize(scores.q_rows());
    result.valid.resize(scores.q_rows());
    for (std::size_t q = 0; q < scores.q_rows(); ++q) {
        auto& valid_row = result.valid[q];
        valid_row.assign(scores.g_cols(), 0);
        auto& order = result.order[q];
        for (std::size_t g = 0; g < scores.g_cols(); ++g) {
            if (!masks.is_valid(q, g)) continue;
            if (is_masked(scores.at(q, g), scores.kind())) continue;
            valid_row[g] = 1;
            order.push_back(g);
        }
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) {
                             const double sa = scores.at(q, a);
                             const double sb = scores.at(q, b);
                             return higher_better ? sa > sb : sa < sb;
                         });
    }
    return result;
}

// =============================================================================
// Metrics
// =============================================================================

struct EvalOptions {
    std::size_t topk = 0;  // 0 = full-gallery mAP; otherwise truncate at topk
    std::size_t threads = 1;
};

/// Computes per-query AP, mAP, and the CMC curve. Queries without a valid
/// positive are skipped and listed in the report. Throws when every query
/// lacks positives.
inline MetricReport evaluate(const SimilarityMatrix& scores,
                             const EvalMasks& masks,
                             const EvalOptions& options = {}) {
    const RankingResult ranking = rank_gallery(scores, masks);
    const std::size_t q_num = scores.q_rows();

    MetricReport report;
    report.num_queries = q_num;
    report.per_query_ap.assign(q_num, 0.0);

    std::vector<std::size_t> first_hit(q_num, 0);  // 1-based; 0 = skipped
    std::vector<char> skipped(q_num, 0);
    std::size_t longest = 0;
    for (std::size_t q = 0; q < q_num; ++q)
        longest = std::max(longest, ranking.order[q].size());

    parallel_for(q_num, options.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t q = begin; q < end; ++q) {
            const auto& order = ranking.order[q];
            std::size_t total_positives = 0;
            for (std::size_t g : order)
                if (masks.is_positive(q, g)) ++total_positives;
            if (total_positives == 0) {
                skipped[q] = 1;
                continue;
            }
            double ap = 0.0;
            std::size_t hits = 0;
            for (std::size_t rank = 1; rank <= order.size(); ++rank) {
                if (options.topk != 0 && rank > options.topk) break;
                if (!masks.is_positive(q, order[rank - 1])) continue;
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(rank);
                if (first_hit[q] == 0) first_hit[q] = rank;
            }
            const std::size_t denom =
                options.topk == 0 ? total_positives
                                  : std::min(total_positives, options.topk);
            report.per_query_ap[q] = ap / static_cast<double>(denom);
            if (first_hit[q] == 0) {
                // all positives fell below the topk cut; locate the first one
                // anyway so CMC stays a property of the full ranking
                for (std::size_t rank = 1; rank <= order.size(); ++rank) {
                    if (masks.is_positive(q, order[rank - 1])) {
                        first_hit[q] = rank;
                        break;
                    }
                }
            }
        }
    });

    double ap_sum = 0.0;
    std::size_t evaluated = 0;
    for (std::size_t q = 0; q < q_num; ++q) {
        if (skipped[q]) {
            report.skipped_queries.push_back(q);
            continue;
        }
        ap_sum += report.per_query_ap[q];
        ++evaluated;
    }
    if (evaluated == 0)
        throw Error(ErrorCategory::Validation,
                    "no query has a valid positive; nothing to evaluate");
    report.map = ap_sum / static_cast<double>(evaluated);

    report.cmc.assign(longest == 0 ? 1 : longest, 0.0);
    for (std::size_t q = 0; q < q_num; ++q) {
        if (skipped[q]) continue;
        for (std::size_t k = first_hit[q] - 1; k < report.cmc.size(); ++k)
            report.cmc[k] += 1.0;
    }
    for (double& v : report.cmc) v /= static_cast<double>(evaluated);
    return report;
}

}  // namespace vocreid
