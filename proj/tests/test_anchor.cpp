#include <catch2/catch_amalgamated.hpp>

#include "scdl/anchor.hpp"
#include "scdl/grad_check.hpp"

using namespace scdl;

namespace {

// Toy deterministic encoder: pool 2x2 cells, token = (cell mean, cell mean + 1).
TokenBatch pool_encoder(const Tensor& x) {
    const Shape& s = x.shape();
    std::int64_t B = s[0], H = s[2], W = s[3];
    std::int64_t gh = H / 2, gw = W / 2;
    Tensor Z = Tensor::zeros({B, gh * gw, 2});
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t ty = 0; ty < gh; ++ty)
            for (std::int64_t tx = 0; tx < gw; ++tx) {
                double m = 0;
                for (std::int64_t dy = 0; dy < 2; ++dy)
                    for (std::int64_t dx = 0; dx < 2; ++dx)
                        m += x.data()[(b * H + ty * 2 + dy) * W + tx * 2 + dx];
                m /= 4.0;
                std::int64_t l = ty * gw + tx;
                Z.data()[(b * gh * gw + l) * 2 + 0] = m;
                Z.data()[(b * gh * gw + l) * 2 + 1] = m + 1.0;
            }
    return TokenBatch(Z, gh, gw);
}

} // namespace

TEST_CASE("mask_class_image keeps only the requested class") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    std::vector<std::uint8_t> y = {0, 1, 1, 2};
    Tensor m1 = mask_class_image(x, y, 1);
    CHECK(m1.data() == std::vector<double>{0.0, 2.0, 3.0, 0.0});
    Tensor m2 = mask_class_image(x, y, 2);
    CHECK(m2.data() == std::vector<double>{0.0, 0.0, 0.0, 4.0});

    CHECK_THROWS_AS(mask_class_image(x, y, 0), std::invalid_argument);
    CHECK_THROWS_AS(mask_class_image(x, {0, 1}, 1), std::invalid_argument);
}

TEST_CASE("token_class_mask uses the any-pixel rule") {
    // 4x4 image, 2x2 token grid; one class-1 pixel in the top-left cell only
    std::vector<std::uint8_t> y(16, 0);
    y[1 * 4 + 1] = 1;
    auto mask = token_class_mask(y, 4, 4, 2, 2, 1);
    CHECK(mask == std::vector<bool>{true, false, false, false});

    // a single pixel at a cell corner still marks that cell
    std::vector<std::uint8_t> y2(16, 0);
    y2[2 * 4 + 3] = 2; // row 2, col 3 -> bottom-right cell
    auto mask2 = token_class_mask(y2, 4, 4, 2, 2, 2);
    CHECK(mask2 == std::vector<bool>{false, false, false, true});

    CHECK_THROWS_AS(token_class_mask(y, 4, 4, 3, 2, 1), std::invalid_argument);
}

TEST_CASE("compute_anchors averages masked-image token embeddings") {
    // one 4x4 image; class 1 occupies the whole top-left cell
    Tensor img = Tensor::filled({1, 1, 4, 4}, 2.0);
    std::vector<std::uint8_t> y(16, 0);
    y[0] = y[1] = y[4] = y[5] = 1;

    AnchorSet a = compute_anchors(pool_encoder, img, y, 3, 2);
    REQUIRE(a.present.size() == 3);
    CHECK(a.present[1]);
    CHECK_FALSE(a.present[2]);
    CHECK(a.counts[1] == 1);
    CHECK(a.counts[2] == 0);
    // masked image keeps the 4 class-1 pixels (value 2), so that cell mean is 2
    CHECK(a.anchors.data()[1 * 2 + 0] == Catch::Approx(2.0));
    CHECK(a.anchors.data()[1 * 2 + 1] == Catch::Approx(3.0));
    // absent class keeps a zero row
    CHECK(a.anchors.data()[2 * 2 + 0] == 0.0);
    CHECK(a.anchors.data()[2 * 2 + 1] == 0.0);
}

TEST_CASE("compute_anchors averages across images and cells") {
    // two images; class 1 covers top-left cell of image 0 and both top cells of image 1
    Tensor img = Tensor::zeros({2, 1, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i) img.data()[i] = 1.0;        // image 0
    for (std::int64_t i = 16; i < 32; ++i) img.data()[i] = 3.0;       // image 1
    std::vector<std::uint8_t> y(32, 0);
    y[0] = 1;                       // image 0, top-left cell
    y[16 + 0] = 1; y[16 + 2] = 1;   // image 1, both top cells

    AnchorSet a = compute_anchors(pool_encoder, img, y, 2, 2);
    CHECK(a.counts[1] == 3);
    // masked cell means: image 0 cell -> 1/4; image 1 cells -> 3/4 each
    double expect = (0.25 + 0.75 + 0.75) / 3.0;
    CHECK(a.anchors.data()[1 * 2 + 0] == Catch::Approx(expect));
    CHECK(a.anchors.data()[1 * 2 + 1] == Catch::Approx(expect + 1.0));
}

TEST_CASE("compute_anchors produces constants") {
    Rng rng(3);
    Tensor img = Tensor::randn({1, 1, 4, 4}, rng, 1.0, true);
    std::vector<std::uint8_t> y(16, 1);
    AnchorSet a = compute_anchors(pool_encoder, img, y, 2, 2);
    CHECK_FALSE(a.anchors.requires_grad());
}

TEST_CASE("loss_sac worked values") {
    ProxyBank bank;
    bank.C = 3;
    bank.D = 2;
    bank.mu = Tensor::from_data({3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0}, true);
    bank.log_sigma = Tensor::zeros({3, 2}, true);

    AnchorSet a;
    a.anchors = Tensor::from_data({3, 2}, {0.0, 0.0, 0.0, 2.0, -1.0, 0.0});
    a.present = {false, true, true};
    a.counts = {0, 4, 1};

    // class 1: cos(mu_1, anchor_1) = 1 -> 0; class 2: cos((1,1),(-1,0)) = -1/sqrt(2)
    double expect = 0.5 * ((1.0 - 1.0) + (1.0 + 1.0 / std::sqrt(2.0)));
    CHECK(loss_sac(bank, a).item() == Catch::Approx(expect).margin(1e-7));

    SECTION("absent classes are excluded") {
        // corrupt the absent row; the loss must not move
        a.anchors.data()[0] = 99.0;
        CHECK(loss_sac(bank, a).item() == Catch::Approx(expect).margin(1e-12));
    }

    SECTION("no present classes is an error") {
        a.present = {false, false, false};
        CHECK_THROWS_AS(loss_sac(bank, a), std::invalid_argument);
    }

    SECTION("gradients reach mu only") {
        backward(loss_sac(bank, a));
        REQUIRE(bank.mu.has_grad());
        double g0 = std::abs(bank.mu.grad()[0]) + std::abs(bank.mu.grad()[1]);
        CHECK(g0 == 0.0); // class 0 absent
        double g1 = 0;
        for (int i = 2; i < 6; ++i) g1 += std::abs(bank.mu.grad()[i]);
        CHECK(g1 > 0.0);
    }

    SECTION("numeric gradient agrees") {
        auto f = [&] { return loss_sac(bank, a); };
        CHECK(grad_check(f, bank.mu) < 1e-4);
    }
}

TEST_CASE("anchor memory EMA and fill-in") {
    AnchorMemory mem = AnchorMemory::init(3, 2, 0.5);

    AnchorSet batch1;
    batch1.anchors = Tensor::from_data({3, 2}, {0, 0, 4.0, 0.0, 0, 0});
    batch1.present = {false, true, false};
    batch1.counts = {0, 1, 0};
    mem.update(batch1);
    CHECK(mem.ema.data()[2] == 4.0); // first sighting copies

    AnchorSet batch2 = batch1;
    batch2.anchors = Tensor::from_data({3, 2}, {0, 0, 8.0, 0.0, 0, 0});
    mem.update(batch2);
    CHECK(mem.ema.data()[2] == Catch::Approx(0.5 * 4.0 + 0.5 * 8.0));

    // a batch without class 1 gets it filled from memory
    AnchorSet batch3;
    batch3.anchors = Tensor::zeros({3, 2});
    batch3.present = {false, false, false};
    batch3.counts = {0, 0, 0};
    AnchorSet filled = mem.filled(batch3);
    CHECK(filled.present[1]);
    CHECK(filled.anchors.data()[2] == Catch::Approx(6.0));
    CHECK_FALSE(filled.present[2]); // never seen
}
