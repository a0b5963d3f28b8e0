/**
 * @file types.hpp
 * @brief Core data types shared by every stage of the retrieval engine.
 *
 * Contains:
 * - Error / ErrorCategory
 * - Branch, Split, ScoreKind
 * - ItemMeta
 * - EmbeddingMatrix
 * - SimilarityMatrix
 * - RankingResult, MetricReport
 * - Dataset (validated bundle of branch embeddings + metadata)
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace vocreid {

// =============================================================================
// Errors
// =============================================================================

enum class ErrorCategory {
    Config,      // bad parameter or flag combination
    Validation,  // inconsistent dataset / matrix shapes
    Io,          // filesystem failure
    Format,      // malformed file contents
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Validation: return "validation";
        case ErrorCategory::Io: return "io";
        case ErrorCategory::Format: return "format";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

// =============================================================================
// Enums and metadata
// =============================================================================

enum class Branch { vehicle, orientation, camera };
enum class Split { query, gallery };
enum class ScoreKind { similarity, distance };  // similarity: higher=closer

inline const char* to_string(Branch b) {
    switch (b) {
        case Branch::vehicle: return "vehicle";
        case Branch::orientation: return "orientation";
        case Branch::camera: return "camera";
    }
    return "unknown";
}

inline const char* to_string(Split s) {
    return s == Split::query ? "query" : "gallery";
}

// Orientation bins quantize the viewing angle (0-360 degrees) into 36 ids.
inline constexpr int kOrientationBinCount = 36;

/// Per-image identity record. Absent track_id means the image forms a
/// singleton track; absent orientation_bin means the label is unknown.
struct ItemMeta {
    std::string image_id;
    Split split = Split::gallery;
    std::int64_t vehicle_id = 0;
    std::int64_t camera_id = 0;
    std::optional<std::int64_t> track_id;
    std::optional<int> orientation_bin;

    void validate() const {
        if (image_id.empty())
            throw Error(ErrorCategory::Validation, "item has empty image_id");
        if (vehicle_id < 0)
            throw Error(ErrorCategory::Validation,
                        "negative vehicle_id for image " + image_id);
        if (camera_id < 0)
            throw Error(ErrorCategory::Validation,
                        "negative camera_id for image " + image_id);
        if (track_id && *track_id < 0)
            throw Error(ErrorCategory::Validation,
                        "negative track_id for image " + image_id);
        if (orientation_bin &&
            (*orientation_bin < 0 || *orientation_bin >= kOrientationBinCount))
            throw Error(ErrorCategory::Validation,
                        "orientation_bin out of [0,36) for image " + image_id);
    }
};

// =============================================================================
// EmbeddingMatrix
// =============================================================================

/// N x D row-major feature matrix for one branch. Values are stored as float
/// to match the on-disk payload bit for bit; reductions elsewhere accumulate
/// in double.
class EmbeddingMatrix {
public:
    EmbeddingMatrix(std::size_t rows, std::size_t dims, Branch branch)
        : rows_(rows), dims_(dims), branch_(branch), data_(rows * dims, 0.0f) {
        check_shape();
    }

    EmbeddingMatrix(std::size_t rows, std::size_t dims, std::vector<float> data,
                    Branch branch)
        : rows_(rows), dims_(dims), branch_(branch), data_(std::move(data)) {
        check_shape();
        if (data_.size() != rows_ * dims_)
            throw Error(ErrorCategory::Validation,
                        "embedding data length does not match rows*dims");
        for (float v : data_)
            if (!std::isfinite(v))
                throw Error(ErrorCategory::Validation,
                            "non-finite value in embedding matrix");
    }

    std::size_t rows() const { return rows_; }
    std::size_t dims() const { return dims_; }
    Branch branch() const { return branch_; }

    std::span<const float> row(std::size_t i) const {
        return {data_.data() + i * dims_, dims_};
    }
    std::span<float> row(std::size_t i) {
        return {data_.data() + i * dims_, dims_};
    }

    const std::vector<float>& data() const { return data_; }
    std::vector<float>& data() { return data_; }

private:
    void check_shape() const {
        if (rows_ == 0 || dims_ == 0)
            throw Error(ErrorCategory::Validation,
                        "embedding matrix needs rows >= 1 and dims >= 1");
    }

    std::size_t rows_;
    std::size_t dims_;
    Branch branch_;
    std::vector<float> data_;
};

// =============================================================================
// SimilarityMatrix
// =============================================================================

// Masked entries carry a reserved sentinel that sorts strictly worse than any
// achievable score and stays finite so ordering remains total.
inline constexpr double kMaskedSimilarity = -1e30;
inline constexpr double kMaskedDistance = 1e30;

inline double masked_sentinel(ScoreKind kind) {
    return kind == ScoreKind::similarity ? kMaskedSimilarity : kMaskedDistance;
}

inline bool is_masked(double value, ScoreKind kind) {
    return kind == ScoreKind::similarity ? value <= kMaskedSimilarity * 0.1
                                         : value >= kMaskedDistance * 0.1;
}

/// Q x G matrix of pairwise scores between query and gallery items.
class SimilarityMatrix {
public:
    SimilarityMatrix(std::size_t q_rows, std::size_t g_cols, ScoreKind kind)
        : q_rows_(q_rows), g_cols_(g_cols), kind_(kind),
          data_(q_rows * g_cols, 0.0) {
        if (q_rows_ == 0 || g_cols_ == 0)
            throw Error(ErrorCategory::Validation,
                        "similarity matrix needs q_rows >= 1 and g_cols >= 1");
    }

    std::size_t q_rows() const { return q_rows_; }
    std::size_t g_cols() const { return g_cols_; }
    ScoreKind kind() const { return kind_; }
    void set_kind(ScoreKind k) { kind_ = k; }

    double at(std::size_t i, std::size_t j) const {
        return data_[i * g_cols_ + j];
    }
    double& at(std::size_t i, std::size_t j) { return data_[i * g_cols_ + j]; }

    std::span<const double> row(std::size_t i) const {
        return {data_.data() + i * g_cols_, g_cols_};
    }
    std::span<double> row(std::size_t i) {
        return {data_.data() + i * g_cols_, g_cols_};
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

private:
    std::size_t q_rows_;
    std::size_t g_cols_;
    ScoreKind kind_;
    std::vector<double> data_;
};

// =============================================================================
// Rankings and metrics
// =============================================================================

/// Per-query ranked gallery plus the validity mask used to produce it.
/// order[q] is a permutation of the unmasked gallery indices, best first.
struct RankingResult {
    std::vector<std::vector<std::size_t>> order;
    std::vector<std::vector<char>> valid;  // Q x G, 1 = kept for evaluation
};

struct MetricReport {
    double map = 0.0;
    std::vector<double> cmc;           // cmc[k] = P(first hit at rank <= k+1)
    std::vector<double> per_query_ap;  // aligned with queries; skipped => 0
    std::vector<std::size_t> skipped_queries;  // queries with no valid positive
    std::size_t num_queries = 0;

    double rank_at(std::size_t k) const {
        if (cmc.empty()) return 0.0;
        return cmc[std::min(k, cmc.size() - 1)];
    }
};

// =============================================================================
// Dataset
// =============================================================================

/// Immutable, validated bundle of branch embeddings and aligned metadata.
/// Construction is single-threaded; afterwards the dataset is safe to read
/// from any number of workers.
class Dataset {
public:
    /// Validates row-count agreement across branches and metadata, uniqueness
    /// of image ids, and a non-empty query/gallery partition. The vehicle
    /// branch is required; orientation and camera are optional.
    static Dataset validate(std::vector<EmbeddingMatrix> branches,
                            std::vector<ItemMeta> meta) {
        if (meta.empty())
            throw Error(ErrorCategory::Validation, "dataset has no items");

        Dataset ds;
        ds.meta_ = std::move(meta);
        const std::size_t n = ds.meta_.size();

        bool seen[3] = {false, false, false};
        for (auto& b : branches) {
            const auto idx = static_cast<std::size_t>(b.branch());
            if (seen[idx])
                throw Error(ErrorCategory::Validation,
                            std::string("duplicate branch: ") +
                                to_string(b.branch()));
            seen[idx] = true;
            if (b.rows() != n)
                throw Error(ErrorCategory::Validation,
                            std::string("row-count mismatch: branch ") +
                                to_string(b.branch()) + " has " +
                                std::to_string(b.rows()) + " rows, metadata has " +
                                std::to_string(n));
        }
        if (!seen[static_cast<std::size_t>(Branch::vehicle)])
            throw Error(ErrorCategory::Validation, "vehicle branch is required");

        std::unordered_set<std::string> ids;
        ids.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& m = ds.meta_[i];
            m.validate();
            if (!ids.insert(m.image_id).second)
                throw Error(ErrorCategory::Validation,
                            "duplicate image_id: " + m.image_id);
            if (m.split == Split::query)
                ds.query_indices_.push_back(i);
            else
                ds.gallery_indices_.push_back(i);
        }
        if (ds.query_indices_.empty())
            throw Error(ErrorCategory::Validation, "empty query split");
        if (ds.gallery_indices_.empty())
            throw Error(ErrorCategory::Validation, "empty gallery split");

        for (auto& b : branches)
            ds.branches_.push_back(std::move(b));
        return ds;
    }

    std::size_t size() const { return meta_.size(); }
    std::size_t num_queries() const { return query_indices_.size(); }
    std::size_t num_gallery() const { return gallery_indices_.size(); }

    bool has_branch(Branch b) const { return find_branch(b) != nullptr; }

    const EmbeddingMatrix& branch(Branch b) const {
        const EmbeddingMatrix* m = find_branch(b);
        if (!m)
            throw Error(ErrorCategory::Validation,
                        std::string("branch not present: ") + to_string(b));
        return *m;
    }

    const std::vector<ItemMeta>& meta() const { return meta_; }
    const std::vector<std::size_t>& query_indices() const {
        return query_indices_;
    }
    const std::vector<std::size_t>& gallery_indices() const {
        return gallery_indices_;
    }

    EmbeddingMatrix rows_for(Branch b, const std::vector<std::size_t>& idx) const {
        const EmbeddingMatrix& src = branch(b);
        EmbeddingMatrix out(idx.size(), src.dims(), b);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto s = src.row(idx[i]);
            auto d = out.row(i);
            std::copy(s.begin(), s.end(), d.begin());
        }
        return out;
    }

    EmbeddingMatrix query_embeddings(Branch b) const {
        return rows_for(b, query_indices_);
    }
    EmbeddingMatrix gallery_embeddings(Branch b) const {
        return rows_for(b, gallery_indices_);
    }

    std::vector<ItemMeta> query_meta() const { return meta_for(query_indices_); }
    std::vector<ItemMeta> gallery_meta() const {
        return meta_for(gallery_indices_);
    }

private:
    Dataset() = default;

    const EmbeddingMatrix* find_branch(Branch b) const {
        for (const auto& m : branches_)
            if (m.branch() == b) return &m;
        return nullptr;
    }

    std::vector<ItemMeta> meta_for(const std::vector<std::size_t>& idx) const {
        std::vector<ItemMeta> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) out.push_back(meta_[i]);
        return out;
    }

    std::vector<EmbeddingMatrix> branches_;
    std::vector<ItemMeta> meta_;
    std::vector<std::size_t> query_indices_;
    std::vector<std::size_t> gallery_indices_;
};

}  // namespace vocreid
