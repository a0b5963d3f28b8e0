/**
 * @file retrieval.hpp
 * @brief Per-branch similarity matrices, track aggregation, and score fusion.
 *
 * Contains:
 * - FusionWeights
 * - similarity_matrix: dense cosine similarity, row-parallel over queries
 * - track_aggregate: replace gallery rows by their track mean
 * - voc_fuse: S_v - lambda_o * S_o - lambda_c * S_c
 * - hard_camera_mask: same-camera exclusion or the literal binary rule
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

#include "vocreid/feature_ops.hpp"
#include "vocreid/parallel.hpp"
#include "vocreid/types.hpp"

namespace vocreid {

/// Penalty weights for the orientation and camera similarity terms.
struct FusionWeights {
    double lambda_o = 0.1;
    double lambda_c = 0.1;

    void validate() const {
        if (!std::isfinite(lambda_o) || lambda_o < 0.0 ||
            !std::isfinite(lambda_c) || lambda_c < 0.0)
            throw Error(ErrorCategory::Config,
                        "fusion weights must be finite and non-negative");
    }
};

namespace detail {

/// Cosine of two unit rows, accumulated in double and clamped to [-1, 1].
/// The per-entry accumulation is sequential, so results do not depend on how
/// rows are partitioned across workers.
inline double unit_dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d)
        sum += static_cast<double>(a[d]) * static_cast<double>(b[d]);
    return std::clamp(sum, -1.0, 1.0);
}

inline EmbeddingMatrix normalized_or_throw(const EmbeddingMatrix& m,
                                           const char* what) {
    NormalizeResult n = l2_normalize(m);
    if (!n.zero_rows.empty())
        throw Error(ErrorCategory::Validation,
                    std::string("zero-norm row ") +
                        std::to_string(n.zero_rows.front()) + " in " + what);
    return std::move(n.matrix);
}

}  // namespace detail

// =============================================================================
// Cosine similarity matrix
// =============================================================================

/// Entry (i, j) = cosine of query row i and gallery row j. Inputs are
/// normalized internally; zero-norm rows are an error here (unlike
/// l2_normalize, a similarity against nothing has no meaning).
inline SimilarityMatrix similarity_matrix(const EmbeddingMatrix& queries,
                                          const EmbeddingMatrix& gallery,
                                          std::size_t threads = 1) {
    if (queries.dims() != gallery.dims())
        throw Error(ErrorCategory::Validation,
                    "dimension mismatch: query D=" +
                        std::to_string(queries.dims()) + ", gallery D=" +
                        std::to_string(gallery.dims()));

    const EmbeddingMatrix q = detail::normalized_or_throw(queries, "queries");
    const EmbeddingMatrix g = detail::normalized_or_throw(gallery, "gallery");

    SimilarityMatrix out(q.rows(), g.rows(), ScoreKind::similarity);
    parallel_for(q.rows(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto qi = q.row(i);
            auto row = out.row(i);
            for (std::size_t j = 0; j < g.rows(); ++j)
                row[j] = detail::unit_dot(qi, g.row(j));
        }
    });
    return out;
}

// =============================================================================
// Image-to-track aggregation
// =============================================================================

/// Replaces every gallery row by the arithmetic mean of the rows sharing its
/// track_id. Rows without a track_id are singleton tracks and pass through.
/// The mean is returned un-normalized; similarity_matrix renormalizes.
inline EmbeddingMatrix track_aggregate(const EmbeddingMatrix& gallery,
                                       const std::vector<ItemMeta>& meta) {
    if (meta.size() != gallery.rows())
        throw Error(ErrorCategory::Validation,
                    "track_aggregate: metadata rows do not match gallery rows");

    std::map<std::int64_t, std::vector<std::size_t>> tracks;
    for (std::size_t i = 0; i < meta.size(); ++i)
        if (meta[i].track_id) tracks[*meta[i].track_id].push_back(i);

    EmbeddingMatrix out = gallery;
    std::vector<double> mean(gallery.dims());
    for (const auto& [track, members] : tracks) {
        if (members.size() < 2) continue;
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t i : members) {
            auto row = gallery.row(i);
            for (std::size_t d = 0; d < row.size(); ++d)
                mean[d] += static_cast<double>(row[d]);
        }
        const double inv = 1.0 / static_cast<double>(members.size());
        for (double& v : mean) v *= inv;
        for (std::size_t i : members) {
            auto row = out.row(i);
            for (std::size_t d = 0; d < row.size(); ++d)
                row[d] = static_cast<float>(mean[d]);
        }
    }
    return out;
}

// =============================================================================
// VOC fusion
// =============================================================================

/// Entry-wise S_v - lambda_o * S_o - lambda_c * S_c. Absent branches simply
/// contribute nothing. Ranking is by descending fused score.
inline SimilarityMatrix voc_fuse(const SimilarityMatrix& vehicle,
                                 const SimilarityMatrix* orientation,
                                 const SimilarityMatrix* camera,
                                 const FusionWeights& weights) {
    weights.validate();
    auto check_shape = [&](const SimilarityMatrix* m, const char* name) {
        if (!m) return;
        if (m->q_rows() != vehicle.q_rows() || m->g_cols() != vehicle.g_cols())
            throw Error(ErrorCategory::Validation,
                        std::string("shape mismatch between vehicle and ") +
                            name + " matrices");
        if (m->kind() != ScoreKind::similarity)
            throw Error(ErrorCategory::Validation,
                        std::string(name) + " matrix must be similarity kind");
    };
    if (vehicle.kind() != ScoreKind::similarity)
        throw Error(ErrorCategory::Validation,
                    "vehicle matrix must be similarity kind");
    check_shape(orientation, "orientation");
    check_shape(camera, "camera");

    // zero-weight terms are skipped outright so the identity case stays
    // bit-identical to S_v
    SimilarityMatrix out = vehicle;
    if (orientation && weights.lambda_o != 0.0) {
        for (std::size_t k = 0; k < out.data().size(); ++k)
            out.data()[k] -= weights.lambda_o * orientation->data()[k];
    }
    if (camera && weights.lambda_c != 0.0) {
        for (std::size_t k = 0; k < out.data().size(); ++k)
            out.data()[k] -= weights.lambda_c * camera->data()[k];
    }
    return out;
}

// =============================================================================
// Hard camera rule
// =============================================================================

enum class HardCameraMode {
    exclude_same_camera,  // same-camera entries -> masked sentinel
    literal_eq5,          // binary distance: 0 if same camera else 1
};

/// exclude_same_camera keeps the input kind and stamps the masked sentinel on
/// same-camera pairs so they rank last and drop out of evaluation.
/// literal_eq5 discards the scores entirely and returns the printed binary
/// rule as a distance matrix (0 = same camera, 1 = different), contradiction
/// and all; it exists so the baseline comparison is runnable.
inline SimilarityMatrix hard_camera_mask(const SimilarityMatrix& scores,
                                         const std::vector<ItemMeta>& meta_q,
                                         const std::vector<ItemMeta>& meta_g,
                                         HardCameraMode mode) {
    if (meta_q.size() != scores.q_rows() || meta_g.size() != scores.g_cols())
        throw Error(ErrorCategory::Validation,
                    "hard_camera_mask: metadata does not match matrix shape");

    if (mode == HardCameraMode::exclude_same_camera) {
        SimilarityMatrix out = scores;
        const double sentinel = masked_sentinel(out.kind());
        for (std::size_t i = 0; i < out.q_rows(); ++i)
            for (std::size_t j = 0; j < out.g_cols(); ++j)
                if (meta_q[i].camera_id == meta_g[j].camera_id)
                    out.at(i, j) = sentinel;
        return out;
    }

    SimilarityMatrix out(scores.q_rows(), scores.g_cols(), ScoreKind::distance);
    for (std::size_t i = 0; i < out.q_rows(); ++i)
        for (std::size_t j = 0; j < out.g_cols(); ++j)
            out.at(i, j) = meta_q[i].camera_id == meta_g[j].camera_id ? 0.0 : 1.0;
    return out;
}

}  // namespace vocreid
