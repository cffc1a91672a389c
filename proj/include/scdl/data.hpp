#ifndef SCDL_DATA_HPP
#define SCDL_DATA_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "scdl/rng.hpp"

namespace scdl {

// Long-tailed synthetic 2D segmentation data: one elliptical blob per
// foreground class per image, with per-class target area ratios and heavily
// overlapping intensity distributions so class identity is not trivially
// readable from a single pixel.
struct SyntheticDatasetSpec {
    std::int64_t H = 64, W = 64;
    std::int64_t C = 4; // incl. background
    std::vector<double> area_ratios = {0.30, 0.09, 0.01};  // foreground classes
    std::vector<double> intensity_means = {0.0, 0.45, 0.65, 0.85}; // incl. background
    double noise_std = 0.30;
    std::int64_t N = 200;
    double labeled_fraction = 0.1;
    std::uint64_t seed = 1;

    void validate() const {
        if (static_cast<std::int64_t>(area_ratios.size()) != C - 1)
            throw std::invalid_argument("dataset spec: need C-1 area ratios");
        if (static_cast<std::int64_t>(intensity_means.size()) != C)
            throw std::invalid_argument("dataset spec: need C intensity means");
        double total = 0.0;
        for (double a : area_ratios) {
            if (a <= 0.0) throw std::invalid_argument("dataset spec: area ratios must be positive");
            total += a;
        }
        if (total >= 1.0)
            throw std::invalid_argument("dataset spec: area ratios must sum below 100%");
        if (N < 1) throw std::invalid_argument("dataset spec: N must be >= 1");
        if (labeled_fraction < 0.0 || labeled_fraction > 1.0)
            throw std::invalid_argument("dataset spec: labeled fraction must be in [0,1]");
    }
};

struct Dataset {
    std::int64_t N = 0, H = 0, W = 0, C = 0;
    std::vector<float> images;        // N*H*W
    std::vector<std::uint8_t> labels; // N*H*W
    std::vector<std::uint8_t> labeled; // N flags
    std::vector<std::int64_t> class_pixel_counts; // realized histogram, C entries

    std::vector<std::int64_t> labeled_indices() const {
        std::vector<std::int64_t> out;
        for (std::int64_t i = 0; i < N; ++i)
            if (labeled[i]) out.push_back(i);
        return out;
    }
    std::vector<std::int64_t> unlabeled_indices() const {
        std::vector<std::int64_t> out;
        for (std::int64_t i = 0; i < N; ++i)
            if (!labeled[i]) out.push_back(i);
        return out;
    }
};

inline Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset ds;
    ds.N = spec.N;
    ds.H = spec.H;
    ds.W = spec.W;
    ds.C = spec.C;
    ds.images.assign(static_cast<std::size_t>(spec.N * spec.H * spec.W), 0.0f);
    ds.labels.assign(static_cast<std::size_t>(spec.N * spec.H * spec.W), 0);
    ds.labeled.assign(static_cast<std::size_t>(spec.N), 0);
    ds.class_pixel_counts.assign(static_cast<std::size_t>(spec.C), 0);

    std::int64_t n_labeled = static_cast<std::int64_t>(
        std::ceil(spec.labeled_fraction * static_cast<double>(spec.N)));
    for (std::int64_t i = 0; i < n_labeled && i < spec.N; ++i) ds.labeled[i] = 1;

    for (std::int64_t n = 0; n < spec.N; ++n) {
        std::uint8_t* lab = ds.labels.data() + n * spec.H * spec.W;
        // rarest class painted last so it survives overlaps
        for (std::int64_t c = 1; c < spec.C; ++c) {
            double target = spec.area_ratios[c - 1] * static_cast<double>(spec.H * spec.W);
            double r = std::sqrt(target / 3.14159265358979323846);
            if (2.0 * r + 2.0 >= static_cast<double>(std::min(spec.H, spec.W)))
                throw std::invalid_argument("generate_dataset: infeasible area ratio, blob does not fit");
            double scale = rng.uniform(0.85, 1.15);
            double aspect = rng.uniform(0.7, 1.4);
            double ry = r * scale * std::sqrt(aspect);
            double rx = r * scale / std::sqrt(aspect);
            double cy = rng.uniform(ry + 1.0, static_cast<double>(spec.H) - ry - 1.0);
            double cx = rng.uniform(rx + 1.0, static_cast<double>(spec.W) - rx - 1.0);
            for (std::int64_t y = 0; y < spec.H; ++y)
                for (std::int64_t x = 0; x < spec.W; ++x) {
                    double dy = (static_cast<double>(y) - cy) / ry;
                    double dx = (static_cast<double>(x) - cx) / rx;
                    if (dy * dy + dx * dx <= 1.0)
                        lab[y * spec.W + x] = static_cast<std::uint8_t>(c);
                }
        }
        float* img = ds.images.data() + n * spec.H * spec.W;
        for (std::int64_t i = 0; i < spec.H * spec.W; ++i) {
            std::uint8_t c = lab[i];
            ds.class_pixel_counts[c] += 1;
            img[i] = static_cast<float>(spec.intensity_means[c] + spec.noise_std * rng.normal());
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// SCDS container: magic "SCDS", version u32, N, H, W, C (u32 LE), then per
// sample: image f32 H*W, labels u8 H*W, labeled-flag u8.
// ---------------------------------------------------------------------------

namespace detail_io {
inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}
inline float read_f32(std::istream& is) {
    std::uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}
} // namespace detail_io

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_dataset: cannot open " + path);
    os.write("SCDS", 4);
    detail_io::write_u32(os, 1);
    detail_io::write_u32(os, static_cast<std::uint32_t>(ds.N));
    detail_io::write_u32(os, static_cast<std::uint32_t>(ds.H));
    detail_io::write_u32(os, static_cast<std::uint32_t>(ds.W));
    detail_io::write_u32(os, static_cast<std::uint32_t>(ds.C));
    std::int64_t hw = ds.H * ds.W;
    for (std::int64_t n = 0; n < ds.N; ++n) {
        for (std::int64_t i = 0; i < hw; ++i)
            detail_io::write_f32(os, ds.images[n * hw + i]);
        os.write(reinterpret_cast<const char*>(ds.labels.data() + n * hw), hw);
        os.write(reinterpret_cast<const char*>(&ds.labeled[n]), 1);
    }
    if (!os) throw std::runtime_error("save_dataset: write failed for " + path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_dataset: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SCDS", 4) != 0)
        throw std::runtime_error("load_dataset: bad magic in " + path);
    std::uint32_t version = detail_io::read_u32(is);
    if (version != 1)
        throw std::runtime_error("load_dataset: unsupported version " + std::to_string(version));
    Dataset ds;
    ds.N = detail_io::read_u32(is);
    ds.H = detail_io::read_u32(is);
    ds.W = detail_io::read_u32(is);
    ds.C = detail_io::read_u32(is);
    std::int64_t hw = ds.H * ds.W;
    ds.images.resize(static_cast<std::size_t>(ds.N * hw));
    ds.labels.resize(static_cast<std::size_t>(ds.N * hw));
    ds.labeled.resize(static_cast<std::size_t>(ds.N));
    ds.class_pixel_counts.assign(static_cast<std::size_t>(ds.C), 0);
    for (std::int64_t n = 0; n < ds.N; ++n) {
        for (std::int64_t i = 0; i < hw; ++i)
            ds.images[n * hw + i] = detail_io::read_f32(is);
        is.read(reinterpret_cast<char*>(ds.labels.data() + n * hw), hw);
        is.read(reinterpret_cast<char*>(&ds.labeled[n]), 1);
    }
    if (!is) throw std::runtime_error("load_dataset: truncated file " + path);
    for (auto c : ds.labels) ds.class_pixel_counts[c] += 1;
    return ds;
}

} // namespace scdl

#endif
