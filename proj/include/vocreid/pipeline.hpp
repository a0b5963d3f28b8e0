/**
 * @file pipeline.hpp
 * @brief End-to-end driver: track aggregation, per-branch similarity, fusion,
 *        optional re-ranking, evaluation, and report formatting.
 *
 * Stage order is track_aggregate -> similarity -> voc_fuse -> rerank ->
 * evaluate. The track stage can instead be applied after re-ranking at the
 * score-matrix level (--track-order=after-rerank); neither order is claimed
 * to be canonical.
 *
 * The fused query-query and gallery-gallery blocks required by re-ranking are
 * computed entry-fused from the normalized branch features, which is
 * arithmetically identical to composing similarity_matrix and voc_fuse but
 * never materializes per-branch G x G temporaries.
 */
#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vocreid/evaluation.hpp"
#include "vocreid/rerank.hpp"
#include "vocreid/retrieval.hpp"
#include "vocreid/types.hpp"

namespace vocreid {

struct PipelineOptions {
    FusionWeights weights;
    bool use_orientation = true;  // engage the branch when the dataset has it
    bool use_camera = true;
    std::vector<Branch> track_branches;  // empty = no aggregation
    bool track_after_rerank = false;     // aggregate final score columns instead
    bool rerank = false;
    RerankConfig rerank_config;
    std::optional<HardCameraMode> hard_camera;
    std::size_t topk = 0;
    std::size_t threads = 1;
};

struct PipelineResult {
    MetricReport report;
    SimilarityMatrix scores;  // matrix the report was evaluated on
};

namespace detail {

struct BranchViews {
    const EmbeddingMatrix* vehicle = nullptr;
    const EmbeddingMatrix* orientation = nullptr;
    const EmbeddingMatrix* camera = nullptr;
};

/// Fused cosine similarity computed entry-wise from pre-normalized branch
/// features: clamp(dot_v) - lambda_o * clamp(dot_o) - lambda_c * clamp(dot_c),
/// with zero-weight or absent terms skipped, matching voc_fuse bit for bit.
inline SimilarityMatrix fused_similarity(const BranchViews& rows,
                                         const BranchViews& cols,
                                         const FusionWeights& w,
                                         std::size_t threads) {
    const std::size_t q = rows.vehicle->rows();
    const std::size_t g = cols.vehicle->rows();
    const bool with_o = rows.orientation && w.lambda_o != 0.0;
    const bool with_c = rows.camera && w.lambda_c != 0.0;

    SimilarityMatrix out(q, g, ScoreKind::similarity);
    parallel_for(q, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto out_row = out.row(i);
            for (std::size_t j = 0; j < g; ++j) {
                double s = unit_dot(rows.vehicle->row(i), cols.vehicle->row(j));
                if (with_o)
                    s -= w.lambda_o *
                         unit_dot(rows.orientation->row(i),
                                  cols.orientation->row(j));
                if (with_c)
                    s -= w.lambda_c *
                         unit_dot(rows.camera->row(i), cols.camera->row(j));
                out_row[j] = s;
            }
        }
    });
    return out;
}

/// Averages final score columns over gallery tracks (the after-rerank order).
inline SimilarityMatrix aggregate_score_columns(
    const SimilarityMatrix& scores, const std::vector<ItemMeta>& meta_g) {
    std::map<std::int64_t, std::vector<std::size_t>> tracks;
    for (std::size_t g = 0; g < meta_g.size(); ++g)
        if (meta_g[g].track_id) tracks[*meta_g[g].track_id].push_back(g);

    SimilarityMatrix out = scores;
    for (const auto& [track, members] : tracks) {
        if (members.size() < 2) continue;
        const double inv = 1.0 / static_cast<double>(members.size());
        for (std::size_t i = 0; i < scores.q_rows(); ++i) {
            double sum = 0.0;
            for (std::size_t g : members) sum += scores.at(i, g);
            const double mean = sum * inv;
            for (std::size_t g : members) out.at(i, g) = mean;
        }
    }
    return out;
}

}  // namespace detail

// =============================================================================
// Pipeline driver
// =============================================================================

inline PipelineResult run_pipeline(const Dataset& dataset,
                                   const PipelineOptions& options) {
    options.weights.validate();
    if (options.rerank) options.rerank_config.validate();

    const std::vector<ItemMeta> meta_q = dataset.query_meta();
    const std::vector<ItemMeta> meta_g = dataset.gallery_meta();
    const EvalMasks masks = build_masks(meta_q, meta_g);
    const EvalOptions eval_options{options.topk, options.threads};

    if (options.hard_camera == HardCameraMode::literal_eq5) {
        if (options.rerank)
            throw Error(ErrorCategory::Config,
                        "the literal Eq-5 baseline cannot be re-ranked");
        SimilarityMatrix shape(meta_q.size(), meta_g.size(),
                               ScoreKind::similarity);
        SimilarityMatrix scores = hard_camera_mask(
            shape, meta_q, meta_g, HardCameraMode::literal_eq5);
        MetricReport report = evaluate(scores, masks, eval_options);
        return {std::move(report), std::move(scores)};
    }

    const bool track_now =
        !options.track_branches.empty() && !options.track_after_rerank;
    auto prepare = [&](Branch b) {
        EmbeddingMatrix gallery = dataset.gallery_embeddings(b);
        if (track_now) {
            for (Branch t : options.track_branches)
                if (t == b) {
                    gallery = track_aggregate(gallery, meta_g);
                    break;
                }
        }
        return std::pair{detail::normalized_or_throw(
                             dataset.query_embeddings(b), "queries"),
                         detail::normalized_or_throw(gallery, "gallery")};
    };

    std::optional<std::pair<EmbeddingMatrix, EmbeddingMatrix>> vehicle, orient,
        camera;
    vehicle = prepare(Branch::vehicle);
    if (options.use_orientation && dataset.has_branch(Branch::orientation))
        orient = prepare(Branch::orientation);
    if (options.use_camera && dataset.has_branch(Branch::camera))
        camera = prepare(Branch::camera);

    detail::BranchViews q_views{&vehicle->first,
                                orient ? &orient->first : nullptr,
                                camera ? &camera->first : nullptr};
    detail::BranchViews g_views{&vehicle->second,
                                orient ? &orient->second : nullptr,
                                camera ? &camera->second : nullptr};

    SimilarityMatrix scores = detail::fused_similarity(
        q_views, g_views, options.weights, options.threads);

    if (options.rerank) {
        RerankConfig cfg = options.rerank_config;
        cfg.threads = options.threads;
        const SimilarityMatrix query_self = detail::fused_similarity(
            q_views, q_views, options.weights, options.threads);
        const SimilarityMatrix gallery_self = detail::fused_similarity(
            g_views, g_views, options.weights, options.threads);
        scores = k_reciprocal_rerank(scores, query_self, gallery_self, cfg);
    }

    if (!options.track_branches.empty() && options.track_after_rerank)
        scores = detail::aggregate_score_columns(scores, meta_g);

    if (options.hard_camera == HardCameraMode::exclude_same_camera)
        scores = hard_camera_mask(scores, meta_q, meta_g,
                                  HardCameraMode::exclude_same_camera);

    MetricReport report = evaluate(scores, masks, eval_options);
    return {std::move(report), std::move(scores)};
}

// =============================================================================
// Ablation sweep
// =============================================================================

struct AblationToggles {
    bool orientation = false;
    bool camera = false;
    bool rerank = false;
    bool track = false;
};

/// Cumulative branch sweep in Table-3 order: V, V+O, V+O+C, restricted to the
/// branches the dataset actually carries.
inline std::vector<AblationToggles> standard_sweep(const Dataset& dataset,
                                                   bool rerank, bool track) {
    std::vector<AblationToggles> rows;
    rows.push_back({false, false, rerank, track});
    const bool has_o = dataset.has_branch(Branch::orientation);
    const bool has_c = dataset.has_branch(Branch::camera);
    if (has_o) rows.push_back({true, false, rerank, track});
    if (has_c) rows.push_back({has_o, true, rerank, track});
    return rows;
}

inline std::vector<MetricReport> ablation_run(
    const Dataset& dataset, const std::vector<AblationToggles>& rows,
    const PipelineOptions& base) {
    std::vector<MetricReport> reports;
    reports.reserve(rows.size());
    for (const AblationToggles& row : rows) {
        if (row.orientation && !dataset.has_branch(Branch::orientation))
            throw Error(ErrorCategory::Config,
                        "ablation requests orientation branch, dataset has none");
        if (row.camera && !dataset.has_branch(Branch::camera))
            throw Error(ErrorCategory::Config,
                        "ablation requests camera branch, dataset has none");
        PipelineOptions options = base;
        options.use_orientation = row.orientation;
        options.use_camera = row.camera;
        options.rerank = row.rerank;
        if (row.track) {
            options.track_branches =
                base.track_branches.empty()
                    ? std::vector<Branch>{Branch::vehicle, Branch::orientation,
                                          Branch::camera}
                    : base.track_branches;
        } else {
            options.track_branches.clear();
        }
        reports.push_back(run_pipeline(dataset, options).report);
    }
    return reports;
}

// =============================================================================
// Report formats
// =============================================================================

inline const char* to_string(const std::optional<HardCameraMode>& mode) {
    if (!mode) return "off";
    return *mode == HardCameraMode::exclude_same_camera ? "exclude" : "eq5";
}

/// One JSON object per ablation row:
/// {config, map, rank1, rank5, num_queries, skipped_queries}
inline std::string report_jsonl(const std::vector<AblationToggles>& rows,
                                const std::vector<MetricReport>& reports,
                                const PipelineOptions& options) {
    std::string out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        nlohmann::ordered_json config{
            {"orientation", rows[i].orientation},
            {"camera", rows[i].camera},
            {"rerank", rows[i].rerank},
            {"track", rows[i].track},
            {"lambda_o", options.weights.lambda_o},
            {"lambda_c", options.weights.lambda_c},
            {"k1", options.rerank_config.k1},
            {"k2", options.rerank_config.k2},
            {"lambda_rr", options.rerank_config.lambda_rr},
            {"hard_camera", to_string(options.hard_camera)},
            {"topk", options.topk},
        };
        nlohmann::ordered_json line{
            {"config", std::move(config)},
            {"map", reports[i].map},
            {"rank1", reports[i].rank_at(0)},
            {"rank5", reports[i].rank_at(4)},
            {"num_queries", reports[i].num_queries},
            {"skipped_queries", reports[i].skipped_queries.size()},
        };
        out += line.dump();
        out.push_back('\n');
    }
    return out;
}

/// Plain-text checkmark table with one column per ablation row.
inline std::string ablation_table(const std::vector<AblationToggles>& rows,
                                  const std::vector<MetricReport>& reports) {
    const std::size_t label_width = 18;
    const std::size_t col_width = 9;
    auto pad = [&](std::string s, std::size_t width) {
        if (s.size() < width) s.insert(0, width - s.size(), ' ');
        return s;
    };
    auto label = [&](std::string s) {
        s.resize(label_width, ' ');
        return s;
    };

    std::string out;
    auto emit_flags = [&](const std::string& name, auto getter) {
        out += label(name);
        for (const auto& row : rows) out += pad(getter(row) ? "x" : "", col_width);
        out.push_back('\n');
    };
    emit_flags("Vehicle ReID", [](const AblationToggles&) { return true; });
    emit_flags("Orientation ReID",
               [](const AblationToggles& t) { return t.orientation; });
    emit_flags("Camera ReID", [](const AblationToggles& t) { return t.camera; });
    emit_flags("Re-ranking", [](const AblationToggles& t) { return t.rerank; });
    emit_flags("Track average", [](const AblationToggles& t) { return t.track; });

    auto emit_metric = [&](const std::string& name, auto getter) {
        out += label(name);
        for (const auto& report : reports) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * getter(report));
            out += pad(buf, col_width);
        }
        out.push_back('\n');
    };
    emit_metric("mAP", [](const MetricReport& r) { return r.map; });
    emit_metric("rank1", [](const MetricReport& r) { return r.rank_at(0); });
    emit_metric("rank5", [](const MetricReport& r) { return r.rank_at(4); });
    return out;
}

}  // namespace vocreid
