#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "vocreid/feature_ops.hpp"

using namespace vocreid;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

FeatureMap single_channel(std::size_t h, std::size_t w,
                          std::vector<double> cells) {
    return FeatureMap(1, h, w, std::move(cells));
}

}  // namespace

TEST_CASE("gem pooling matches its closed-form endpoints", "[feature_ops]") {
    const FeatureMap map = single_channel(1, 3, {1.0, 2.0, 3.0});

    SECTION("p = 1 is average pooling") {
        CHECK_THAT(gem_pool(map, 1.0)[0], WithinRel(2.0, 1e-12));
    }
    SECTION("large p approaches max pooling") {
        CHECK_THAT(gem_pool(map, 1000.0)[0], WithinAbs(3.0, 1e-2));
    }
    SECTION("p = 3 equals the hand-computed cube-mean root") {
        // (1 + 8 + 27) / 3 = 12, so the pooled value is 12^(1/3)
        CHECK_THAT(gem_pool(map, 3.0)[0], WithinRel(std::cbrt(12.0), 1e-12));
    }
}

TEST_CASE("gem pooling rejects invalid inputs", "[feature_ops]") {
    const FeatureMap map = single_channel(1, 3, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(gem_pool(map, 0.5), Error);
    CHECK_THROWS_AS(gem_pool(map, std::nan("")), Error);
    CHECK_THROWS_AS(single_channel(1, 2, {1.0, -0.5}), Error);
    CHECK_THROWS_AS(FeatureMap(1, 0, 3), Error);
}

TEST_CASE("gem pooling is monotone in p and bounded by mean and max",
          "[feature_ops]") {
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> value(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> size(1, 64);
    std::uniform_real_distribution<double> exponent(1.0, 16.0);

    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t cells = size(gen);
        std::vector<double> data(cells);
        for (double& v : data) v = value(gen);
        const FeatureMap map = single_channel(1, cells, data);

        double p1 = exponent(gen), p2 = exponent(gen);
        if (p1 > p2) std::swap(p1, p2);
        const double g1 = gem_pool(map, p1)[0];
        const double g2 = gem_pool(map, p2)[0];
        CHECK(g1 <= g2 + 1e-12);

        double mean = 0.0, peak = 0.0;
        for (double v : data) {
            mean += v;
            peak = std::max(peak, v);
        }
        mean /= static_cast<double>(cells);
        CHECK(g1 >= mean - 1e-12);
        CHECK(g1 <= peak + 1e-12);
    }
}

TEST_CASE("l2 normalization scales rows and reports zero rows", "[feature_ops]") {
    EmbeddingMatrix m(3, 2, {3.0f, 4.0f, 0.0f, 0.0f, 1.0f, 0.0f},
                      Branch::vehicle);
    const NormalizeResult result = l2_normalize(m);

    CHECK(result.matrix.row(0)[0] == Catch::Approx(0.6).margin(1e-7));
    CHECK(result.matrix.row(0)[1] == Catch::Approx(0.8).margin(1e-7));

    REQUIRE(result.zero_rows == std::vector<std::size_t>{1});
    CHECK(result.matrix.row(1)[0] == 0.0f);
    CHECK(result.matrix.row(1)[1] == 0.0f);

    // an already-unit row is left bit-identical
    CHECK(result.matrix.row(2)[0] == 1.0f);
    CHECK(result.matrix.row(2)[1] == 0.0f);
}

TEST_CASE("l2 normalization is idempotent bitwise", "[feature_ops]") {
    std::mt19937_64 gen(17);
    const auto m = testutil::random_embeddings(gen, 20, 9, Branch::vehicle);
    const auto once = l2_normalize(m);
    const auto twice = l2_normalize(once.matrix);
    CHECK(once.matrix.data() == twice.matrix.data());
}

TEST_CASE("wsd bounding box covers exactly the above-threshold cells",
          "[feature_ops]") {
    SECTION("single hot cell") {
        std::vector<double> cells(16, 0.0);
        cells[1 * 4 + 2] = 1.0;  // (x=2, y=1)
        const BoundingBox box = wsd_bbox(single_channel(4, 4, cells), 0.5);
        CHECK(box == BoundingBox{2, 1, 2, 1});
    }
    SECTION("uniform map selects everything") {
        const std::vector<double> cells(12, 0.7);
        const BoundingBox box = wsd_bbox(single_channel(3, 4, cells), 0.5);
        CHECK(box == BoundingBox{0, 0, 3, 2});
    }
    SECTION("two qualifying cells span the box, background excluded") {
        std::vector<double> cells(16, 0.2);
        cells[1 * 4 + 1] = 1.0;  // (1,1)
        cells[2 * 4 + 3] = 0.6;  // (3,2)
        const FeatureMap map = single_channel(4, 4, cells);
        const BoundingBox box = wsd_bbox(map, 0.5);

        // brute-force scan over all cells as the reference
        std::size_t x0 = 4, y0 = 4, x1 = 0, y1 = 0;
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 4; ++x)
                if (map.at(0, y, x) > 0.5 * 1.0) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                }
        CHECK(box == BoundingBox{x0, y0, x1, y1});
        CHECK(box == BoundingBox{1, 1, 3, 2});
    }
    SECTION("errors") {
        CHECK_THROWS_AS(wsd_bbox(single_channel(2, 2, {0, 0, 0, 0}), 0.5), Error);
        CHECK_THROWS_AS(wsd_bbox(single_channel(1, 1, {1.0}), 0.0), Error);
        CHECK_THROWS_AS(wsd_bbox(single_channel(1, 1, {1.0}), 1.0), Error);
    }
}

TEST_CASE("wsd box always contains the peak cell", "[feature_ops]") {
    std::mt19937_64 gen(1234);
    std::uniform_real_distribution<double> value(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> cells(5 * 7);
        for (double& v : cells) v = value(gen);
        const FeatureMap map = single_channel(5, 7, cells);
        std::size_t peak_x = 0, peak_y = 0;
        double peak = -1.0;
        for (std::size_t y = 0; y < 5; ++y)
            for (std::size_t x = 0; x < 7; ++x)
                if (map.at(0, y, x) > peak) {
                    peak = map.at(0, y, x);
                    peak_x = x;
                    peak_y = y;
                }
        const BoundingBox box = wsd_bbox(map, 0.5);
        CHECK(box.x0 <= peak_x);
        CHECK(peak_x <= box.x1);
        CHECK(box.y0 <= peak_y);
        CHECK(peak_y <= box.y1);
    }
}

TEST_CASE("cosine annealing hits its endpoints and midpoint", "[feature_ops]") {
    const LrSchedule schedule(3.5e-4, 7.7e-7, 100);
    CHECK_THAT(cosine_lr(schedule, 0), WithinRel(3.5e-4, 1e-12));
    CHECK_THAT(cosine_lr(schedule, 100), WithinRel(7.7e-7, 1e-12));
    CHECK_THAT(cosine_lr(schedule, 50),
               WithinRel((3.5e-4 + 7.7e-7) / 2.0, 1e-12));
    CHECK_THROWS_AS(cosine_lr(schedule, 101), Error);
}

TEST_CASE("cosine annealing never increases", "[feature_ops]") {
    for (std::size_t total : {std::size_t{12}, std::size_t{10000}}) {
        const LrSchedule schedule(3.5e-4, 7.7e-7, total);
        double prev = cosine_lr(schedule, 0);
        for (std::size_t step = 1; step <= total; ++step) {
            const double lr = cosine_lr(schedule, step);
            CHECK(lr <= prev);
            prev = lr;
        }
    }
}

TEST_CASE("schedule construction validates its bounds", "[feature_ops]") {
    CHECK_THROWS_AS(LrSchedule(0.0, 0.0, 10), Error);
    CHECK_THROWS_AS(LrSchedule(1e-3, 2e-3, 10), Error);
    CHECK_THROWS_AS(LrSchedule(1e-3, 1e-5, 0), Error);
}
