#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "scdl/checkpoint.hpp"
#include "scdl/config.hpp"
#include "scdl/data.hpp"

using namespace scdl;
namespace fs = std::filesystem;

namespace {
fs::path tmp_path(const char* name) {
    return fs::temp_directory_path() / name;
}
} // namespace

TEST_CASE("dataset generation") {
    SyntheticDatasetSpec spec;
    spec.N = 20;
    spec.seed = 5;
    Dataset ds = generate_dataset(spec);

    SECTION("shapes and label range") {
        CHECK(ds.N == 20);
        CHECK(ds.images.size() == static_cast<std::size_t>(20 * 64 * 64));
        CHECK(ds.labels.size() == ds.images.size());
        for (auto l : ds.labels) CHECK(l < 4);
    }

    SECTION("long-tailed class histogram") {
        // background dominates; foreground counts fall off with the target ratios
        CHECK(ds.class_pixel_counts[0] > ds.class_pixel_counts[1]);
        CHECK(ds.class_pixel_counts[1] > ds.class_pixel_counts[2]);
        CHECK(ds.class_pixel_counts[2] > ds.class_pixel_counts[3]);
        CHECK(ds.class_pixel_counts[3] > 0);
        std::int64_t total = 0;
        for (auto c : ds.class_pixel_counts) total += c;
        // rarest class sits near its 1% target (overlap can only shrink it)
        double tail = static_cast<double>(ds.class_pixel_counts[3]) / static_cast<double>(total);
        CHECK(tail > 0.003);
        CHECK(tail < 0.02);
    }

    SECTION("labeled fraction rounds up") {
        CHECK(ds.labeled_indices().size() == 2); // ceil(0.1 * 20)
        spec.N = 11;
        CHECK(generate_dataset(spec).labeled_indices().size() == 2); // ceil(1.1)
    }

    SECTION("deterministic per seed, different across seeds") {
        Dataset again = generate_dataset(spec);
        CHECK(again.images == ds.images);
        CHECK(again.labels == ds.labels);
        spec.seed = 6;
        Dataset other = generate_dataset(spec);
        CHECK(other.images != ds.images);
    }

    SECTION("spec validation") {
        SyntheticDatasetSpec bad = spec;
        bad.area_ratios = {0.5, 0.6, 0.1};
        CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
        bad = spec;
        bad.labeled_fraction = 1.5;
        CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
        bad = spec;
        bad.intensity_means = {0.0, 0.5};
        CHECK_THROWS_AS(generate_dataset(bad), std::invalid_argument);
    }
}

TEST_CASE("dataset container roundtrip") {
    SyntheticDatasetSpec spec;
    spec.N = 6;
    spec.H = spec.W = 16;
    spec.area_ratios = {0.2, 0.08, 0.02};
    Dataset ds = generate_dataset(spec);
    auto path = tmp_path("scdl_test_ds.scds");
    save_dataset(ds, path.string());

    Dataset back = load_dataset(path.string());
    CHECK(back.N == ds.N);
    CHECK(back.H == ds.H);
    CHECK(back.W == ds.W);
    CHECK(back.C == ds.C);
    CHECK(back.images == ds.images);   // bit-exact f32 payload
    CHECK(back.labels == ds.labels);
    CHECK(back.labeled == ds.labeled);
    CHECK(back.class_pixel_counts == ds.class_pixel_counts);

    SECTION("two saves produce identical bytes") {
        auto path2 = tmp_path("scdl_test_ds2.scds");
        save_dataset(ds, path2.string());
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
        fs::remove(path2);
    }

    SECTION("bad magic is rejected") {
        auto bad = tmp_path("scdl_test_bad.scds");
        std::ofstream(bad, std::ios::binary) << "NOPE" << std::string(16, '\0');
        CHECK_THROWS_AS(load_dataset(bad.string()), std::runtime_error);
        fs::remove(bad);
    }

    SECTION("truncated file is rejected") {
        auto trunc = tmp_path("scdl_test_trunc.scds");
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream(trunc, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
        CHECK_THROWS_AS(load_dataset(trunc.string()), std::runtime_error);
        fs::remove(trunc);
    }
    fs::remove(path);
}

TEST_CASE("crc32 known vector") {
    // standard check value for "123456789"
    CHECK(crc32(std::string("123456789")) == 0xCBF43926u);
    CHECK(crc32(std::string("")) == 0u);
}

TEST_CASE("checkpoint roundtrip") {
    Rng rng(3);
    std::vector<std::pair<std::string, Tensor>> tensors = {
        {"a.w", Tensor::randn({3, 4}, rng)},
        {"b.bias", Tensor::randn({7}, rng)},
        {"scalarish", Tensor::randn({1}, rng)},
    };
    auto path = tmp_path("scdl_test.ckpt");

    SECTION("f64 is exact") {
        save_checkpoint(tensors, path.string(), CheckpointDtype::f64);
        auto back = load_checkpoint(path.string());
        REQUIRE(back.size() == 3);
        for (const auto& [name, t] : tensors) {
            REQUIRE(back.count(name) == 1);
            CHECK(back.at(name).shape() == t.shape());
            CHECK(back.at(name).data() == t.data());
        }
    }

    SECTION("f32 is exact to float precision") {
        save_checkpoint(tensors, path.string(), CheckpointDtype::f32);
        auto back = load_checkpoint(path.string());
        for (const auto& [name, t] : tensors)
            for (std::size_t i = 0; i < t.data().size(); ++i)
                CHECK(back.at(name).data()[i] ==
                      static_cast<double>(static_cast<float>(t.data()[i])));
    }

    SECTION("payload corruption is detected") {
        save_checkpoint(tensors, path.string(), CheckpointDtype::f64);
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(0, std::ios::end);
        auto size = static_cast<std::streamoff>(f.tellg());
        f.seekp(size - 12); // inside the last tensor payload
        char byte;
        f.seekg(size - 12);
        f.read(&byte, 1);
        byte = static_cast<char>(byte ^ 0x40);
        f.seekp(size - 12);
        f.write(&byte, 1);
        f.close();
        CHECK_THROWS_WITH(load_checkpoint(path.string()),
                          Catch::Matchers::ContainsSubstring("CRC"));
    }

    SECTION("bad magic is rejected") {
        std::ofstream(path, std::ios::binary) << "WXYZ" << std::string(32, '\0');
        CHECK_THROWS_AS(load_checkpoint(path.string()), std::runtime_error);
    }
    fs::remove(path);
}

TEST_CASE("config parsing") {
    RunConfig cfg;
    auto entries = parse_config_text("steps = 42\n# comment\nlr=0.5 # inline\n\nseeds=1,2,3\n");
    for (const auto& [k, v] : entries) apply_config_entry(cfg, k, v);
    CHECK(cfg.train.steps == 42);
    CHECK(cfg.train.lr == 0.5);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});

    SECTION("unknown keys are rejected") {
        CHECK_THROWS_AS(apply_config_entry(cfg, "stepz", "3"), std::invalid_argument);
    }
    SECTION("malformed lines are rejected") {
        CHECK_THROWS_AS(parse_config_text("steps 42\n"), std::invalid_argument);
    }
    SECTION("boolean parsing") {
        apply_config_entry(cfg, "enable_sac", "false");
        CHECK_FALSE(cfg.train.enable_sac);
        CHECK_THROWS_AS(apply_config_entry(cfg, "enable_sac", "maybe"), std::invalid_argument);
    }
    SECTION("invariant: anchors require the alignment branch") {
        apply_config_entry(cfg, "enable_cdba", "false");
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
        apply_config_entry(cfg, "enable_sac", "false");
        CHECK_NOTHROW(cfg.validate());
    }
}

TEST_CASE("config hash tracks effective settings") {
    RunConfig a, b;
    CHECK(config_hash(a) == config_hash(b));
    b.train.lr = 0.123;
    CHECK(config_hash(a) != config_hash(b));
    b = a;
    b.dataset.seed = 99;
    CHECK(config_hash(a) != config_hash(b));
    // seeds list is a run axis, not part of the configuration identity
    b = a;
    b.seeds = {7, 8};
    CHECK(config_hash(a) == config_hash(b));
}
