#include <catch2/catch_amalgamated.hpp>

#include "scdl/metrics.hpp"
#include "scdl/rng.hpp"

using namespace scdl;

namespace {

// Reference ASD: explicit all-pairs nearest distance, no distance transform.
double asd_bruteforce(const BinaryMap& pred, const BinaryMap& gt) {
    auto bp = boundary_pixels(pred);
    auto bg = boundary_pixels(gt);
    if (bp.empty() && bg.empty()) return 0.0;
    if (bp.empty() || bg.empty()) return asd_sentinel(pred.H, pred.W);
    auto nearest = [](std::pair<std::int64_t, std::int64_t> p,
                      const std::vector<std::pair<std::int64_t, std::int64_t>>& set) {
        double best = 1e18;
        for (auto [y, x] : set) {
            double dy = static_cast<double>(p.first - y), dx = static_cast<double>(p.second - x);
            best = std::min(best, dy * dy + dx * dx);
        }
        return std::sqrt(best);
    };
    double acc = 0;
    for (auto p : bp) acc += nearest(p, bg);
    for (auto g : bg) acc += nearest(g, bp);
    return acc / static_cast<double>(bp.size() + bg.size());
}

BinaryMap random_map(std::int64_t H, std::int64_t W, double fill, Rng& rng) {
    BinaryMap m(H, W);
    for (auto& v : m.v) v = rng.uniform() < fill ? 1 : 0;
    return m;
}

BinaryMap rect(std::int64_t H, std::int64_t W, std::int64_t y0, std::int64_t x0,
               std::int64_t y1, std::int64_t x1) {
    BinaryMap m(H, W);
    for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x) m.at(y, x) = 1;
    return m;
}

} // namespace

TEST_CASE("dice on hand-built maps") {
    BinaryMap a = rect(4, 4, 0, 0, 2, 2); // 4 pixels
    BinaryMap b = rect(4, 4, 1, 1, 3, 3); // 4 pixels, overlap 1
    CHECK(dice(a, b) == Catch::Approx(2.0 * 1 / 8.0));
    CHECK(dice(a, a) == 1.0);

    BinaryMap empty(4, 4);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(a, empty) == 0.0);
    CHECK(dice(empty, a) == 0.0);

    CHECK_THROWS_AS(dice(a, BinaryMap(3, 3)), std::invalid_argument);
}

TEST_CASE("dice is symmetric and within [0,1]") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        BinaryMap a = random_map(8, 8, 0.4, rng);
        BinaryMap b = random_map(8, 8, 0.4, rng);
        double d = dice(a, b);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(d == dice(b, a));
    }
}

TEST_CASE("boundary pixels of solid shapes") {
    // 3x3 solid block inside 5x5: interior pixel excluded
    BinaryMap m = rect(5, 5, 1, 1, 4, 4);
    auto b = boundary_pixels(m);
    CHECK(b.size() == 8);
    for (auto [y, x] : b) CHECK_FALSE((y == 2 && x == 2));

    // full image: border ring only
    BinaryMap full = rect(5, 5, 0, 0, 5, 5);
    CHECK(boundary_pixels(full).size() == 16);

    // single pixel is its own boundary
    BinaryMap one(5, 5);
    one.at(2, 2) = 1;
    auto b1 = boundary_pixels(one);
    REQUIRE(b1.size() == 1);
    CHECK(b1[0] == std::make_pair<std::int64_t, std::int64_t>(2, 2));
}

TEST_CASE("asd hand-computed cases") {
    // identical shapes -> 0
    BinaryMap a = rect(8, 8, 1, 1, 4, 4);
    CHECK(asd(a, a) == Catch::Approx(0.0));

    // two single pixels 3 apart horizontally
    BinaryMap p(8, 8), g(8, 8);
    p.at(4, 1) = 1;
    g.at(4, 4) = 1;
    CHECK(asd(p, g) == Catch::Approx(3.0));

    // empty cases
    BinaryMap empty(8, 8);
    CHECK(asd(empty, empty) == 0.0);
    CHECK(asd(a, empty) == Catch::Approx(asd_sentinel(8, 8)));
    CHECK(asd(empty, a) == Catch::Approx(asd_sentinel(8, 8)));
    CHECK(asd_sentinel(8, 8) == Catch::Approx(std::sqrt(128.0)));
}

TEST_CASE("asd shifted square against the reference computation") {
    BinaryMap p = rect(10, 10, 2, 2, 6, 6);
    BinaryMap g = rect(10, 10, 3, 3, 7, 7);
    CHECK(asd(p, g) == Catch::Approx(asd_bruteforce(p, g)).margin(1e-12));
    CHECK(asd(p, g) == Catch::Approx(asd(g, p)).margin(1e-12)); // symmetric
}

TEST_CASE("asd matches all-pairs reference on random maps") {
    Rng rng(77);
    int nonempty = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::int64_t H = 4 + static_cast<std::int64_t>(rng.uniform_int(13)); // up to 16
        std::int64_t W = 4 + static_cast<std::int64_t>(rng.uniform_int(13));
        double fill = rng.uniform(0.0, 0.6);
        BinaryMap p = random_map(H, W, fill, rng);
        BinaryMap g = random_map(H, W, fill, rng);
        double fast = asd(p, g);
        double slow = asd_bruteforce(p, g);
        CHECK(fast == Catch::Approx(slow).margin(1e-9));
        if (!p.empty_mask() && !g.empty_mask()) ++nonempty;
    }
    CHECK(nonempty > 50); // the sweep exercises the non-degenerate path
}

TEST_CASE("per_class_metrics") {
    // 4x4, classes 0..2; prediction misses class 2 entirely
    std::vector<std::uint8_t> gt = {0, 0, 1, 1,
                                    0, 0, 1, 1,
                                    2, 2, 0, 0,
                                    2, 2, 0, 0};
    std::vector<std::uint8_t> pred = {0, 0, 1, 1,
                                      0, 0, 1, 1,
                                      0, 0, 0, 0,
                                      0, 0, 0, 0};
    ClassMetrics m = per_class_metrics(pred, gt, 4, 4, 3);
    REQUIRE(m.dice.size() == 3);
    CHECK(m.dice[1] == Catch::Approx(1.0));
    CHECK(m.asd[1] == Catch::Approx(0.0));
    CHECK(m.valid[1]);

    CHECK(m.dice[2] == 0.0);
    CHECK(m.asd[2] == Catch::Approx(asd_sentinel(4, 4)));
    CHECK_FALSE(m.valid[2]);

    CHECK(m.dice[0] == Catch::Approx(2.0 * 8 / (12.0 + 8.0)));
    CHECK(m.valid[0]);

    CHECK_THROWS_AS(per_class_metrics(pred, gt, 4, 3, 3), std::invalid_argument);
}
