/**
 * @file synthgen.hpp
 * @brief Synthetic embedding datasets with controllable identity, orientation,
 *        and camera signal strengths.
 *
 * Vehicle-branch embedding of image i:
 *     alpha_id * u(id_i) + alpha_o * v(bin_i) + alpha_c * w(cam_i) + eps
 * where u, v, w are unit Gaussian directions drawn once per id / bin / camera
 * and eps has per-component sigma noise_sigma. The orientation and camera
 * branches expose v(bin_i) and w(cam_i) in their own spaces with noise
 * sigma/10, which makes them reliable penalty signals. Basis directions for
 * different attributes are independent draws, so they are near-orthogonal in
 * high dimension and the additive bias terms separate cleanly.
 *
 * All draws come from one seeded generator in a fixed order, so generation is
 * bitwise reproducible per seed.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "vocreid/rng.hpp"
#include "vocreid/types.hpp"

namespace vocreid {

struct SynthConfig {
    std::size_t n_ids = 2;
    std::size_t images_per_id = 2;  // first image of each id becomes a query
    std::size_t n_cameras = 1;
    std::size_t n_orient_bins = 36;
    std::size_t dim_vehicle = 64;
    std::size_t dim_orientation = 32;
    std::size_t dim_camera = 32;
    double id_strength = 1.0;      // alpha_id
    double orient_strength = 0.0;  // alpha_o
    double cam_strength = 0.0;     // alpha_c
    double noise_sigma = 0.0;      // per-component, vehicle branch
    std::uint64_t seed = 0;

    void validate() const {
        if (n_ids < 2)
            throw Error(ErrorCategory::Config, "synth needs n_ids >= 2");
        if (images_per_id < 2)
            throw Error(ErrorCategory::Config,
                        "synth needs images_per_id >= 2 (a query and a positive)");
        if (n_cameras < 1)
            throw Error(ErrorCategory::Config, "synth needs n_cameras >= 1");
        if (n_orient_bins < 1 ||
            n_orient_bins > static_cast<std::size_t>(kOrientationBinCount))
            throw Error(ErrorCategory::Config,
                        "n_orient_bins must lie in [1, 36]");
        if (dim_vehicle < 1 || dim_orientation < 1 || dim_camera < 1)
            throw Error(ErrorCategory::Config, "branch dims must be >= 1");
        auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
        if (!nonneg(id_strength) || !nonneg(orient_strength) ||
            !nonneg(cam_strength) || !nonneg(noise_sigma))
            throw Error(ErrorCategory::Config,
                        "signal strengths and noise must be finite and >= 0");
    }
};

/// Per-image attribute assignments, kept alongside the dataset so tests can
/// assert against the generating process directly.
struct SynthGroundTruth {
    std::vector<std::int64_t> vehicle_ids;
    std::vector<std::int64_t> camera_ids;
    std::vector<int> orientation_bins;
    std::vector<std::int64_t> track_ids;
};

struct SynthDataset {
    Dataset dataset;
    SynthGroundTruth truth;
};

namespace detail {

/// Rows are unit-normalized Gaussian directions.
inline std::vector<std::vector<double>> draw_basis(Rng& rng, std::size_t count,
                                                   std::size_t dims) {
    std::vector<std::vector<double>> basis(count, std::vector<double>(dims));
    for (auto& row : basis) {
        double norm_sq = 0.0;
        for (double& v : row) {
            v = rng.next_normal();
            norm_sq += v * v;
        }
        const double inv = norm_sq > 0.0 ? 1.0 / std::sqrt(norm_sq) : 0.0;
        for (double& v : row) v *= inv;
    }
    return basis;
}

}  // namespace detail

inline SynthDataset generate(const SynthConfig& config) {
    config.validate();
    Rng rng(config.seed);

    // draw order is part of the determinism contract: bases first
    // (id, orientation-bias, camera-bias in vehicle space, then the
    // orientation and camera branch bases), then attributes, then noise
    const auto id_basis = detail::draw_basis(rng, config.n_ids, config.dim_vehicle);
    const auto orient_bias =
        detail::draw_basis(rng, config.n_orient_bins, config.dim_vehicle);
    const auto cam_bias =
        detail::draw_basis(rng, config.n_cameras, config.dim_vehicle);
    const auto orient_basis =
        detail::draw_basis(rng, config.n_orient_bins, config.dim_orientation);
    const auto cam_basis =
        detail::draw_basis(rng, config.n_cameras, config.dim_camera);

    const std::size_t n = config.n_ids * config.images_per_id;
    SynthGroundTruth truth;
    truth.vehicle_ids.reserve(n);
    truth.camera_ids.reserve(n);
    truth.orientation_bins.reserve(n);
    truth.track_ids.reserve(n);

    std::int64_t next_track = 0;
    for (std::size_t id = 0; id < config.n_ids; ++id) {
        std::int64_t prev_camera = -1;
        for (std::size_t j = 0; j < config.images_per_id; ++j) {
            const auto cam =
                static_cast<std::int64_t>(rng.next_below(config.n_cameras));
            const auto bin =
                static_cast<int>(rng.next_below(config.n_orient_bins));
            // consecutive same-id same-camera images form one track
            if (cam != prev_camera) ++next_track;
            truth.vehicle_ids.push_back(static_cast<std::int64_t>(id));
            truth.camera_ids.push_back(cam);
            truth.orientation_bins.push_back(bin);
            truth.track_ids.push_back(next_track - 1);
            prev_camera = cam;
        }
    }

    EmbeddingMatrix vehicle(n, config.dim_vehicle, Branch::vehicle);
    EmbeddingMatrix orientation(n, config.dim_orientation, Branch::orientation);
    EmbeddingMatrix camera(n, config.dim_camera, Branch::camera);
    const double branch_sigma = config.noise_sigma / 10.0;

    for (std::size_t i = 0; i < n; ++i) {
        const auto& u = id_basis[static_cast<std::size_t>(truth.vehicle_ids[i])];
        const auto& v =
            orient_bias[static_cast<std::size_t>(truth.orientation_bins[i])];
        const auto& w = cam_bias[static_cast<std::size_t>(truth.camera_ids[i])];
        auto vrow = vehicle.row(i);
        for (std::size_t d = 0; d < config.dim_vehicle; ++d) {
            double value = config.id_strength * u[d] +
                           config.orient_strength * v[d] +
                           config.cam_strength * w[d];
            if (config.noise_sigma > 0.0)
                value += config.noise_sigma * rng.next_normal();
            vrow[d] = static_cast<float>(value);
        }

        const auto& vo =
            orient_basis[static_cast<std::size_t>(truth.orientation_bins[i])];
        auto orow = orientation.row(i);
        for (std::size_t d = 0; d < config.dim_orientation; ++d) {
            double value = vo[d];
            if (branch_sigma > 0.0) value += branch_sigma * rng.next_normal();
            orow[d] = static_cast<float>(value);
        }

        const auto& wc = cam_basis[static_cast<std::size_t>(truth.camera_ids[i])];
        auto crow = camera.row(i);
        for (std::size_t d = 0; d < config.dim_camera; ++d) {
            double value = wc[d];
            if (branch_sigma > 0.0) value += branch_sigma * rng.next_normal();
            crow[d] = static_cast<float>(value);
        }
    }

    std::vector<ItemMeta> meta;
    meta.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ItemMeta m;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "img_%06zu", i);
        m.image_id = buf;
        m.split = (i % config.images_per_id == 0) ? Split::query : Split::gallery;
        m.vehicle_id = truth.vehicle_ids[i];
        m.camera_id = truth.camera_ids[i];
        m.orientation_bin = truth.orientation_bins[i];
        // queries carry no track semantics; only gallery rows aggregate
        if (m.split == Split::gallery) m.track_id = truth.track_ids[i];
        meta.push_back(std::move(m));
    }

    std::vector<EmbeddingMatrix> branches;
    branches.push_back(std::move(vehicle));
    branches.push_back(std::move(orientation));
    branches.push_back(std::move(camera));
    return {Dataset::validate(std::move(branches), std::move(meta)),
            std::move(truth)};
}

}  // namespace vocreid
