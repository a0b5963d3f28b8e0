#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "vocreid/losses.hpp"
#include "vocreid/synthgen.hpp"

using namespace vocreid;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

LabeledBatch make_batch(const std::vector<std::vector<double>>& points,
                        const std::vector<long long>& labels, std::size_t p,
                        std::size_t k) {
    LabeledBatch batch;
    batch.size = points.size();
    batch.dims = points[0].size();
    batch.classes_per_batch = p;
    batch.instances_per_class = k;
    for (const auto& row : points)
        batch.embeddings.insert(batch.embeddings.end(), row.begin(), row.end());
    batch.labels.assign(labels.begin(), labels.end());
    return batch;
}

/// P classes x K instances with random embeddings, labels grouped.
LabeledBatch random_batch(std::mt19937_64& gen, std::size_t p, std::size_t k,
                          std::size_t dims) {
    std::uniform_real_distribution<double> value(-1.0, 1.0);
    std::vector<std::vector<double>> points;
    std::vector<long long> labels;
    for (std::size_t c = 0; c < p; ++c) {
        for (std::size_t i = 0; i < k; ++i) {
            std::vector<double> row(dims);
            for (double& v : row) v = value(gen);
            points.push_back(std::move(row));
            labels.push_back(static_cast<long long>(10 * (c + 1)));
        }
    }
    return make_batch(points, labels, p, k);
}

std::vector<std::vector<double>> batch_points(const LabeledBatch& batch) {
    std::vector<std::vector<double>> points(batch.size,
                                            std::vector<double>(batch.dims));
    for (std::size_t i = 0; i < batch.size; ++i)
        for (std::size_t d = 0; d < batch.dims; ++d)
            points[i][d] = batch.row(i)[d];
    return points;
}

std::vector<long long> batch_labels(const LabeledBatch& batch) {
    return {batch.labels.begin(), batch.labels.end()};
}

/// Lower-triangular Cholesky factor of a small symmetric PSD matrix.
std::vector<std::vector<double>> cholesky(
    const std::vector<std::vector<double>>& gram) {
    const std::size_t n = gram.size();
    std::vector<std::vector<double>> l(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = gram[i][j];
            for (std::size_t k = 0; k < j; ++k) sum -= l[i][k] * l[j][k];
            l[i][j] = (i == j) ? std::sqrt(sum) : sum / l[j][j];
        }
    }
    return l;
}

}  // namespace

// =============================================================================
// Sampler
// =============================================================================

namespace {

Dataset tiny_dataset(std::size_t n_classes, std::size_t per_class) {
    std::mt19937_64 gen(55);
    std::vector<ItemMeta> meta;
    const std::size_t n = n_classes * per_class;
    for (std::size_t i = 0; i < n; ++i) {
        ItemMeta m;
        m.image_id = "i" + std::to_string(i);
        m.split = i == 0 ? Split::query : Split::gallery;
        m.vehicle_id = static_cast<std::int64_t>(i / per_class);
        m.camera_id = static_cast<std::int64_t>(i % 3);
        meta.push_back(m);
    }
    return Dataset::validate(
        {testutil::random_embeddings(gen, n, 6, Branch::vehicle)}, meta);
}

}  // namespace

TEST_CASE("sampler covers P classes with K instances each", "[losses]") {
    const Dataset ds = tiny_dataset(2, 2);
    const LabeledBatch batch = sample_batch(ds, 2, 2, 123);
    batch.validate();
    CHECK(batch.size == 4);

    std::map<std::int64_t, int> counts;
    for (auto l : batch.labels) ++counts[l];
    REQUIRE(counts.size() == 2);
    for (const auto& [label, count] : counts) CHECK(count == 2);
}

TEST_CASE("sampler errors when fewer classes exist than requested", "[losses]") {
    const Dataset ds = tiny_dataset(3, 4);
    CHECK_THROWS_WITH(sample_batch(ds, 4, 16, 0),
                      Catch::Matchers::ContainsSubstring("classes"));
}

TEST_CASE("sampler is deterministic per seed", "[losses]") {
    const Dataset ds = tiny_dataset(5, 3);
    const LabeledBatch a = sample_batch(ds, 3, 4, 999);
    const LabeledBatch b = sample_batch(ds, 3, 4, 999);
    CHECK(a.embeddings == b.embeddings);
    CHECK(a.labels == b.labels);
    const LabeledBatch c = sample_batch(ds, 3, 4, 1000);
    CHECK(a.embeddings != c.embeddings);
}

TEST_CASE("sampler draws with replacement from small classes", "[losses]") {
    const Dataset ds = tiny_dataset(2, 3);
    const LabeledBatch batch = sample_batch(ds, 2, 8, 5);
    batch.validate();  // 8 instances per class out of 3 available
    CHECK(batch.size == 16);
}

// =============================================================================
// Triplet loss
// =============================================================================

TEST_CASE("triplet loss on hand-built geometries", "[losses]") {
    SECTION("well-separated clusters give zero loss") {
        const auto batch = make_batch(
            {{0, 0}, {0, 0}, {10, 0}, {10, 0}}, {1, 1, 2, 2}, 2, 2);
        CHECK(triplet_loss_batch_hard(batch, 0.3) == 0.0);
    }
    SECTION("fully collapsed batch returns the margin") {
        const auto batch = make_batch(
            {{1, 1}, {1, 1}, {1, 1}, {1, 1}}, {1, 1, 2, 2}, 2, 2);
        CHECK_THAT(triplet_loss_batch_hard(batch, 0.3), WithinRel(0.3, 1e-12));
    }
    SECTION("anchor without a negative is an error") {
        const auto batch = make_batch({{0, 0}, {1, 0}}, {1, 1}, 1, 2);
        CHECK_THROWS_AS(triplet_loss_batch_hard(batch, 0.3), Error);
    }
}

TEST_CASE("triplet loss matches exhaustive enumeration", "[losses]") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t p = 2 + trial % 3;
        const std::size_t k = 2 + trial % 2;
        const LabeledBatch batch = random_batch(gen, p, k, 5);
        const double fast = triplet_loss_batch_hard(batch, 0.3);
        const double slow = oracles::enumerate_triplet(batch_points(batch),
                                                       batch_labels(batch), 0.3);
        CHECK_THAT(fast, WithinAbs(slow, 1e-9));
    }
}

TEST_CASE("triplet loss is invariant under rigid rotation", "[losses]") {
    std::mt19937_64 gen(31);
    const std::size_t dims = 4;
    const LabeledBatch batch = random_batch(gen, 2, 3, dims);

    // random orthogonal matrix via Gram-Schmidt
    std::uniform_real_distribution<double> value(-1.0, 1.0);
    std::vector<std::vector<double>> basis(dims, std::vector<double>(dims));
    for (auto& row : basis)
        for (double& v : row) v = value(gen);
    for (std::size_t i = 0; i < dims; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            double proj = 0.0;
            for (std::size_t d = 0; d < dims; ++d)
                proj += basis[i][d] * basis[j][d];
            for (std::size_t d = 0; d < dims; ++d)
                basis[i][d] -= proj * basis[j][d];
        }
        double norm = 0.0;
        for (double v : basis[i]) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : basis[i]) v /= norm;
    }

    LabeledBatch rotated = batch;
    for (std::size_t i = 0; i < batch.size; ++i)
        for (std::size_t d = 0; d < dims; ++d) {
            double sum = 0.0;
            for (std::size_t e = 0; e < dims; ++e)
                sum += basis[d][e] * batch.row(i)[e];
            rotated.embeddings[i * dims + d] = sum;
        }

    CHECK_THAT(triplet_loss_batch_hard(rotated, 0.3),
               WithinAbs(triplet_loss_batch_hard(batch, 0.3), 1e-9));
}

TEST_CASE("triplet loss is bounded by margin plus the batch diameter",
          "[losses]") {
    std::mt19937_64 gen(77);
    for (int trial = 0; trial < 50; ++trial) {
        const LabeledBatch batch = random_batch(gen, 2, 4, 6);
        double diameter = 0.0;
        for (std::size_t i = 0; i < batch.size; ++i)
            for (std::size_t j = i + 1; j < batch.size; ++j) {
                double sum = 0.0;
                for (std::size_t d = 0; d < batch.dims; ++d) {
                    const double diff = batch.row(i)[d] - batch.row(j)[d];
                    sum += diff * diff;
                }
                diameter = std::max(diameter, std::sqrt(sum));
            }
        CHECK(triplet_loss_batch_hard(batch, 0.3) <= 0.3 + diameter + 1e-12);
    }
}

// =============================================================================
// Circle loss
// =============================================================================

TEST_CASE("circle loss vanishes on an antipodally separated batch", "[losses]") {
    // same-class pairs at cosine +1, cross-class pairs at cosine -1
    const auto batch = make_batch(
        {{1, 0}, {1, 0}, {-1, 0}, {-1, 0}}, {1, 1, 2, 2}, 2, 2);
    CHECK_THAT(circle_loss(batch, LossConfig{}), WithinAbs(0.0, 1e-12));
}

TEST_CASE("circle loss at the decision boundary is log(1 + Nn*Np)", "[losses]") {
    // Gram matrix pinning every positive pair to cosine 0.65 = 1 - m and
    // every negative pair to 0.35 = m; embeddings come out of its Cholesky
    // factor, so all eight cross terms sit exactly on the boundary.
    const std::vector<std::vector<double>> gram{
        {1.00, 0.65, 0.35, 0.35},
        {0.65, 1.00, 0.35, 0.35},
        {0.35, 0.35, 1.00, 0.65},
        {0.35, 0.35, 0.65, 1.00},
    };
    const auto batch = make_batch(cholesky(gram), {1, 1, 2, 2}, 2, 2);
    // 2 positive pairs, 4 negative pairs
    CHECK_THAT(circle_loss(batch, LossConfig{}),
               WithinRel(std::log(1.0 + 4.0 * 2.0), 1e-9));
}

TEST_CASE("circle loss matches the direct formula at small scale", "[losses]") {
    std::mt19937_64 gen(404);
    LossConfig config;
    config.circle_scale = 4.0;  // no overflow risk, direct evaluation is exact
    for (int trial = 0; trial < 100; ++trial) {
        const LabeledBatch batch = random_batch(gen, 2, 4, 8);
        const double stable = circle_loss(batch, config);
        const double direct = oracles::direct_circle(
            batch_points(batch), batch_labels(batch), 4.0, 0.35);
        CHECK_THAT(stable, WithinRel(direct, 1e-9));
    }
}

TEST_CASE("circle loss is exactly invariant under label renaming", "[losses]") {
    std::mt19937_64 gen(505);
    const LabeledBatch batch = random_batch(gen, 3, 2, 5);
    LabeledBatch renamed = batch;
    for (auto& label : renamed.labels) label = label * 31 + 7;
    CHECK(circle_loss(batch, LossConfig{}) ==
          circle_loss(renamed, LossConfig{}));
}

TEST_CASE("losses are stable under batch permutation", "[losses]") {
    std::mt19937_64 gen(606);
    const LabeledBatch batch = random_batch(gen, 2, 4, 6);
    std::vector<std::size_t> perm(batch.size);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);

    LabeledBatch shuffled = batch;
    for (std::size_t i = 0; i < batch.size; ++i) {
        shuffled.labels[i] = batch.labels[perm[i]];
        for (std::size_t d = 0; d < batch.dims; ++d)
            shuffled.embeddings[i * batch.dims + d] = batch.row(perm[i])[d];
    }
    CHECK_THAT(circle_loss(shuffled, LossConfig{}),
               WithinAbs(circle_loss(batch, LossConfig{}), 1e-12));
    CHECK_THAT(triplet_loss_batch_hard(shuffled, 0.3),
               WithinAbs(triplet_loss_batch_hard(batch, 0.3), 1e-12));
}

TEST_CASE("circle loss requires both pair polarities", "[losses]") {
    const auto no_negatives =
        make_batch({{1, 0}, {0, 1}, {1, 1}}, {1, 1, 1}, 1, 3);
    CHECK_THROWS_WITH(circle_loss(no_negatives, LossConfig{}),
                      Catch::Matchers::ContainsSubstring("no negative pairs"));
    const auto no_positives = make_batch({{1, 0}, {0, 1}}, {1, 2}, 2, 1);
    CHECK_THROWS_WITH(circle_loss(no_positives, LossConfig{}),
                      Catch::Matchers::ContainsSubstring("no positive pairs"));
}

// =============================================================================
// Combined loss
// =============================================================================

TEST_CASE("combined loss is the 1:1 sum of its parts", "[losses]") {
    std::mt19937_64 gen(707);
    const LossConfig config;
    for (int trial = 0; trial < 20; ++trial) {
        const LabeledBatch batch = random_batch(gen, 2, 3, 4);
        const double expected =
            circle_loss(batch, config) +
            triplet_loss_batch_hard(batch, config.triplet_margin);
        CHECK(combined_loss(batch, config) == expected);
    }
}

TEST_CASE("combined loss vanishes on the separated batch", "[losses]") {
    const auto batch = make_batch(
        {{1, 0}, {1, 0}, {-1, 0}, {-1, 0}}, {1, 1, 2, 2}, 2, 2);
    CHECK(combined_loss(batch, LossConfig{}) < 1e-6);
}
