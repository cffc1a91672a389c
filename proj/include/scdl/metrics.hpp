#ifndef SCDL_METRICS_HPP
#define SCDL_METRICS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace scdl {

// Binary label map, row-major H x W.
struct BinaryMap {
    std::int64_t H = 0, W = 0;
    std::vector<std::uint8_t> v;

    BinaryMap() = default;
    BinaryMap(std::int64_t h, std::int64_t w) : H(h), W(w), v(static_cast<std::size_t>(h * w), 0) {}

    std::uint8_t at(std::int64_t y, std::int64_t x) const { return v[y * W + x]; }
    std::uint8_t& at(std::int64_t y, std::int64_t x) { return v[y * W + x]; }
    bool empty_mask() const {
        for (auto e : v)
            if (e) return false;
        return true;
    }
};

inline void check_same_shape(const BinaryMap& a, const BinaryMap& b, const char* op) {
    if (a.H != b.H || a.W != b.W)
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// 2|P∩G| / (|P|+|G|); both empty -> 1.0, exactly one empty -> 0.0.
inline double dice(const BinaryMap& pred, const BinaryMap& gt) {
    check_same_shape(pred, gt, "dice");
    std::int64_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        p += pred.v[i] ? 1 : 0;
        g += gt.v[i] ? 1 : 0;
        both += (pred.v[i] && gt.v[i]) ? 1 : 0;
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

// Boundary pixels: set pixels with at least one four-neighbor outside the
// set, or on the image border.
inline std::vector<std::pair<std::int64_t, std::int64_t>> boundary_pixels(const BinaryMap& m) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t y = 0; y < m.H; ++y)
        for (std::int64_t x = 0; x < m.W; ++x) {
            if (!m.at(y, x)) continue;
            bool border = y == 0 || y == m.H - 1 || x == 0 || x == m.W - 1;
            if (border || !m.at(y - 1, x) || !m.at(y + 1, x) || !m.at(y, x - 1) ||
                !m.at(y, x + 1))
                out.emplace_back(y, x);
        }
    return out;
}

inline double asd_sentinel(std::int64_t H, std::int64_t W) {
    return std::sqrt(static_cast<double>(H * H + W * W));
}

namespace detail_edt {

// 1D squared-distance transform (Felzenszwalb & Huttenlocher).
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
    std::int64_t n = static_cast<std::int64_t>(f.size());
    d.assign(f.size(), 0.0);
    std::vector<std::int64_t> v(f.size());
    std::vector<double> z(f.size() + 1);
    std::int64_t k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (std::int64_t q = 1; q < n; ++q) {
        double s;
        while (true) {
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
    }
}

// Exact Euclidean squared-distance transform to the given seed pixels.
inline std::vector<double> edt_2d(std::int64_t H, std::int64_t W,
                                  const std::vector<std::pair<std::int64_t, std::int64_t>>& seeds) {
    const double inf = 1e18;
    std::vector<double> grid(static_cast<std::size_t>(H * W), inf);
    for (auto [y, x] : seeds) grid[y * W + x] = 0.0;
    std::vector<double> col(H), dcol;
    for (std::int64_t x = 0; x < W; ++x) {
        for (std::int64_t y = 0; y < H; ++y) col[y] = grid[y * W + x];
        edt_1d(col, dcol);
        for (std::int64_t y = 0; y < H; ++y) grid[y * W + x] = dcol[y];
    }
    std::vector<double> row(W), drow;
    for (std::int64_t y = 0; y < H; ++y) {
        for (std::int64_t x = 0; x < W; ++x) row[x] = grid[y * W + x];
        edt_1d(row, drow);
        for (std::int64_t x = 0; x < W; ++x) grid[y * W + x] = drow[x];
    }
    return grid;
}

} // namespace detail_edt

// Average Surface Distance: symmetric mean over both boundary sets of the
// nearest-Euclidean-distance to the other boundary. One side empty -> image
// diagonal sentinel; both empty -> 0.
inline double asd(const BinaryMap& pred, const BinaryMap& gt) {
    check_same_shape(pred, gt, "asd");
    auto bp = boundary_pixels(pred);
    auto bg = boundary_pixels(gt);
    if (bp.empty() && bg.empty()) return 0.0;
    if (bp.empty() || bg.empty()) return asd_sentinel(pred.H, pred.W);

    auto dt_to_g = detail_edt::edt_2d(pred.H, pred.W, bg);
    auto dt_to_p = detail_edt::edt_2d(pred.H, pred.W, bp);
    double acc = 0.0;
    for (auto [y, x] : bp) acc += std::sqrt(dt_to_g[y * pred.W + x]);
    for (auto [y, x] : bg) acc += std::sqrt(dt_to_p[y * pred.W + x]);
    return acc / static_cast<double>(bp.size() + bg.size());
}

struct ClassMetrics {
    std::vector<double> dice;  // per class
    std::vector<double> asd;   // per class, sentinel when invalid
    std::vector<bool> valid;   // asd validity (false = sentinel applied)
};

// Per-class metrics over an integer label map pair, classes 0..C-1.
inline ClassMetrics per_class_metrics(const std::vector<std::uint8_t>& pred,
                                      const std::vector<std::uint8_t>& gt,
                                      std::int64_t H, std::int64_t W, std::int64_t C) {
    if (pred.size() != gt.size() || pred.size() != static_cast<std::size_t>(H * W))
        throw std::invalid_argument("per_class_metrics: shape mismatch");
    ClassMetrics out;
    for (std::int64_t c = 0; c < C; ++c) {
        BinaryMap p(H, W), g(H, W);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            p.v[i] = pred[i] == c ? 1 : 0;
            g.v[i] = gt[i] == c ? 1 : 0;
        }
        out.dice.push_back(dice(p, g));
        double a = asd(p, g);
        bool one_empty = p.empty_mask() != g.empty_mask();
        out.asd.push_back(a);
        out.valid.push_back(!one_empty);
    }
    return out;
}

} // namespace scdl

#endif
