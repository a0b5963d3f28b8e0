/**
 * @file feature_ops.hpp
 * @brief Pure numerical operations on feature maps and embeddings.
 *
 * Contains:
 * - FeatureMap, LrSchedule
 * - gem_pool: generalized-mean pooling per channel
 * - l2_normalize: row-wise unit normalization with zero-row reporting
 * - wsd_bbox: tightest box over heatmap cells above a relative threshold
 * - cosine_lr: cosine annealing schedule
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "vocreid/types.hpp"

namespace vocreid {

// =============================================================================
// FeatureMap / LrSchedule
// =============================================================================

/// K x H x W activation volume. Cells must be finite and non-negative;
/// fractional pooling exponents are undefined on negative inputs.
struct FeatureMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;  // channel-major, then row-major

    FeatureMap(std::size_t k, std::size_t h, std::size_t w)
        : channels(k), height(h), width(w), data(k * h * w, 0.0) {
        if (k == 0 || h == 0 || w == 0)
            throw Error(ErrorCategory::Validation, "empty feature map");
    }

    FeatureMap(std::size_t k, std::size_t h, std::size_t w,
               std::vector<double> values)
        : channels(k), height(h), width(w), data(std::move(values)) {
        if (k == 0 || h == 0 || w == 0)
            throw Error(ErrorCategory::Validation, "empty feature map");
        if (data.size() != k * h * w)
            throw Error(ErrorCategory::Validation,
                        "feature map data length does not match K*H*W");
        for (double v : data)
            if (!std::isfinite(v) || v < 0.0)
                throw Error(ErrorCategory::Validation,
                            "feature map cells must be finite and non-negative");
    }

    double at(std::size_t k, std::size_t y, std::size_t x) const {
        return data[(k * height + y) * width + x];
    }
    double& at(std::size_t k, std::size_t y, std::size_t x) {
        return data[(k * height + y) * width + x];
    }
};

struct LrSchedule {
    double lr_max = 0.0;
    double lr_min = 0.0;
    std::size_t total_steps = 1;

    LrSchedule(double max_rate, double min_rate, std::size_t steps)
        : lr_max(max_rate), lr_min(min_rate), total_steps(steps) {
        if (!(lr_max > 0.0) || !std::isfinite(lr_max))
            throw Error(ErrorCategory::Config, "lr_max must be positive");
        if (lr_min < 0.0 || lr_min > lr_max || !std::isfinite(lr_min))
            throw Error(ErrorCategory::Config,
                        "lr_min must satisfy 0 <= lr_min <= lr_max");
        if (total_steps < 1)
            throw Error(ErrorCategory::Config, "total_steps must be >= 1");
    }
};

// =============================================================================
// GeM pooling
// =============================================================================

/// Generalized-mean pooling: ((1/|X_k|) * sum x^p)^(1/p) for each channel.
/// p = 1 gives average pooling, p -> inf approaches max pooling. The sum is
/// evaluated on cells scaled by the channel max so large p cannot overflow.
inline std::vector<double> gem_pool(const FeatureMap& map, double p) {
    if (!std::isfinite(p) || p < 1.0)
        throw Error(ErrorCategory::Config, "gem_pool requires finite p >= 1");

    const std::size_t cells = map.height * map.width;
    std::vector<double> pooled(map.channels, 0.0);
    for (std::size_t k = 0; k < map.channels; ++k) {
        const double* chan = map.data.data() + k * cells;
        double peak = 0.0;
        for (std::size_t i = 0; i < cells; ++i) peak = std::max(peak, chan[i]);
        if (peak == 0.0) {
            pooled[k] = 0.0;
            continue;
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < cells; ++i)
            sum += std::pow(chan[i] / peak, p);
        pooled[k] = peak * std::pow(sum / static_cast<double>(cells), 1.0 / p);
    }
    return pooled;
}

// =============================================================================
// L2 normalization
// =============================================================================

struct NormalizeResult {
    EmbeddingMatrix matrix;
    std::vector<std::size_t> zero_rows;  // left untouched, reported not failed
};

/// Scales each nonzero row to unit Euclidean norm. Rows already within 1e-6
/// of unit norm are left bit-identical, which makes the operation idempotent.
inline NormalizeResult l2_normalize(EmbeddingMatrix matrix) {
    std::vector<std::size_t> zero_rows;
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        auto row = matrix.row(i);
        double norm_sq = 0.0;
        for (float v : row) norm_sq += static_cast<double>(v) * v;
        if (norm_sq == 0.0) {
            zero_rows.push_back(i);
            continue;
        }
        const double norm = std::sqrt(norm_sq);
        if (std::abs(norm - 1.0) <= 1e-6) continue;
        const double inv = 1.0 / norm;
        for (float& v : row) v = static_cast<float>(v * inv);
    }
    return {std::move(matrix), std::move(zero_rows)};
}

// =============================================================================
// Weakly supervised detection box
// =============================================================================

/// Inclusive box in heatmap cell coordinates, x = column, y = row.
struct BoundingBox {
    std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Tightest axis-aligned box containing every cell whose value is strictly
/// above threshold_fraction * max(heatmap). The map must be single-channel.
inline BoundingBox wsd_bbox(const FeatureMap& heatmap,
                            double threshold_fraction) {
    if (heatmap.channels != 1)
        throw Error(ErrorCategory::Config, "wsd_bbox expects a single channel");
    if (!(threshold_fraction > 0.0) || !(threshold_fraction < 1.0))
        throw Error(ErrorCategory::Config,
                    "threshold_fraction must lie in (0,1)");

    double peak = 0.0;
    for (double v : heatmap.data) peak = std::max(peak, v);
    if (peak == 0.0)
        throw Error(ErrorCategory::Validation,
                    "all-zero heatmap yields no box");

    const double cut = threshold_fraction * peak;
    bool found = false;
    BoundingBox box;
    for (std::size_t y = 0; y < heatmap.height; ++y) {
        for (std::size_t x = 0; x < heatmap.width; ++x) {
            if (heatmap.at(0, y, x) <= cut) continue;
            if (!found) {
                box = {x, y, x, y};
                found = true;
            } else {
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x);
                box.y1 = std::max(box.y1, y);
            }
        }
    }
    // peak > cut whenever threshold_fraction < 1, so found is guaranteed
    return box;
}

// =============================================================================
// Cosine learning-rate decay
// =============================================================================

/// lr(step) = lr_min + (lr_max - lr_min)/2 * (1 + cos(pi * step / T)).
inline double cosine_lr(const LrSchedule& schedule, std::size_t step) {
    if (step > schedule.total_steps)
        throw Error(ErrorCategory::Config, "step outside [0, total_steps]");
    const double t = static_cast<double>(step) /
                     static_cast<double>(schedule.total_steps);
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) *
                                 (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace vocreid
