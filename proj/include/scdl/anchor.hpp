#ifndef SCDL_ANCHOR_HPP
#define SCDL_ANCHOR_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "scdl/proxy.hpp"
#include "scdl/tensor.hpp"

namespace scdl {

// Per-class semantic anchors. Rows are detached class-mean embeddings;
// absent classes keep a zero row and present=false.
struct AnchorSet {
    Tensor anchors;                   // C x D, constant (no grad path)
    std::vector<bool> present;        // C
    std::vector<std::int64_t> counts; // C token counts

    std::int64_t num_present() const {
        std::int64_t n = 0;
        for (bool p : present) n += p ? 1 : 0;
        return n;
    }
};

// Zero out all pixels of a single-channel image that are not labeled c.
// x: B x 1 x H x W, y: per-pixel labels (B*H*W, row-major). Fill value is 0.
inline Tensor mask_class_image(const Tensor& x, const std::vector<std::uint8_t>& y,
                               std::uint8_t c) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 1)
        throw std::invalid_argument("mask_class_image: expected B x 1 x H x W");
    if (static_cast<std::size_t>(s[0] * s[2] * s[3]) != y.size())
        throw std::invalid_argument("mask_class_image: label map size mismatch");
    if (c == 0)
        throw std::invalid_argument("mask_class_image: background class has no mask");
    Tensor m = Tensor::zeros(s);
    for (std::size_t i = 0; i < y.size(); ++i)
        m.data()[i] = y[i] == c ? 1.0 : 0.0;
    return mul(x, m);
}

// Token-level class mask: token l is class-c if its receptive cell contains
// at least one class-c pixel ("any" rule).
inline std::vector<bool> token_class_mask(const std::vector<std::uint8_t>& y,
                                          std::int64_t H, std::int64_t W,
                                          std::int64_t grid_h, std::int64_t grid_w,
                                          std::uint8_t c) {
    if (H % grid_h != 0 || W % grid_w != 0)
        throw std::invalid_argument("token_class_mask: image not divisible by token grid");
    std::int64_t cell_h = H / grid_h, cell_w = W / grid_w;
    std::vector<bool> mask(static_cast<std::size_t>(grid_h * grid_w), false);
    for (std::int64_t ty = 0; ty < grid_h; ++ty)
        for (std::int64_t tx = 0; tx < grid_w; ++tx) {
            bool hit = false;
            for (std::int64_t py = ty * cell_h; py < (ty + 1) * cell_h && !hit; ++py)
                for (std::int64_t px = tx * cell_w; px < (tx + 1) * cell_w; ++px)
                    if (y[py * W + px] == c) { hit = true; break; }
            mask[ty * grid_w + tx] = hit;
        }
    return mask;
}

// Encoder callable: images (B x 1 x H x W) -> TokenBatch.
using EncoderFn = std::function<TokenBatch(const Tensor&)>;

// Anchor formation: for each foreground class, encode the
// class-masked images with the shared encoder and average the embeddings of
// tokens whose cell touches that class. Runs without tape recording; the
// result is a constant.
inline AnchorSet compute_anchors(const EncoderFn& encoder, const Tensor& images,
                                 const std::vector<std::uint8_t>& labels,
                                 std::int64_t C, std::int64_t D) {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[0] < 1)
        throw std::invalid_argument("compute_anchors: empty labeled batch");
    std::int64_t B = s[0], H = s[2], W = s[3];

    AnchorSet out;
    out.anchors = Tensor::zeros({C, D});
    out.present.assign(static_cast<std::size_t>(C), false);
    out.counts.assign(static_cast<std::size_t>(C), 0);

    NoGradGuard no_grad;
    for (std::int64_t c = 1; c < C; ++c) {
        Tensor masked = mask_class_image(images, labels, static_cast<std::uint8_t>(c));
        TokenBatch tokens = encoder(masked);
        std::int64_t L = tokens.tokens();
        std::vector<double> acc(static_cast<std::size_t>(D), 0.0);
        std::int64_t n = 0;
        for (std::int64_t b = 0; b < B; ++b) {
            std::vector<std::uint8_t> yb(labels.begin() + b * H * W,
                                         labels.begin() + (b + 1) * H * W);
            auto mask = token_class_mask(yb, H, W, tokens.grid_h, tokens.grid_w,
                                         static_cast<std::uint8_t>(c));
            for (std::int64_t l = 0; l < L; ++l)
                if (mask[l]) {
                    const double* z = tokens.Z.data().data() + (b * L + l) * D;
                    for (std::int64_t d = 0; d < D; ++d) acc[d] += z[d];
                    ++n;
                }
        }
        out.counts[c] = n;
        out.present[c] = n > 0;
        if (n > 0)
            for (std::int64_t d = 0; d < D; ++d)
                out.anchors.data()[c * D + d] = acc[d] / static_cast<double>(n);
    }
    return out;
}

// Mean over present classes of (1 - cos(mu_c, anchor_c)). Anchors are
// constants, so gradients reach mu only.
inline Tensor loss_sac(const ProxyBank& bank, const AnchorSet& anchors) {
    if (anchors.anchors.shape() != bank.mu.shape())
        throw std::invalid_argument("loss_sac: anchor shape mismatch");
    std::vector<std::int64_t> rows;
    for (std::int64_t c = 0; c < bank.C; ++c)
        if (anchors.present[c]) rows.push_back(c);
    if (rows.empty())
        throw std::invalid_argument("loss_sac: no present classes in anchor set");
    Tensor mu_rows = gather_rows(bank.mu, rows);
    Tensor anchor_rows = gather_rows(anchors.anchors, rows);
    return mean(rsub(1.0, cosine_lastdim(mu_rows, anchor_rows)));
}

// Optional cross-batch anchor memory (off by default in the trainer):
// present classes update by exponential moving average, absent classes are
// filled from memory when it has seen them before.
struct AnchorMemory {
    Tensor ema; // C x D
    std::vector<bool> seen;
    double decay = 0.99;

    static AnchorMemory init(std::int64_t C, std::int64_t D, double decay = 0.99) {
        AnchorMemory m;
        m.ema = Tensor::zeros({C, D});
        m.seen.assign(static_cast<std::size_t>(C), false);
        m.decay = decay;
        return m;
    }

    void update(const AnchorSet& batch_anchors) {
        std::int64_t C = ema.dim(0), D = ema.dim(1);
        for (std::int64_t c = 0; c < C; ++c) {
            if (!batch_anchors.present[c]) continue;
            for (std::int64_t d = 0; d < D; ++d) {
                double v = batch_anchors.anchors.data()[c * D + d];
                ema.data()[c * D + d] =
                    seen[c] ? decay * ema.data()[c * D + d] + (1.0 - decay) * v : v;
            }
            seen[c] = true;
        }
    }

    AnchorSet filled(const AnchorSet& batch_anchors) const {
        AnchorSet out = batch_anchors;
        out.anchors = Tensor::from_data(batch_anchors.anchors.shape(),
                                        batch_anchors.anchors.data());
        std::int64_t C = ema.dim(0), D = ema.dim(1);
        for (std::int64_t c = 1; c < C; ++c)
            if (!out.present[c] && seen[c]) {
                for (std::int64_t d = 0; d < D; ++d)
                    out.anchors.data()[c * D + d] = ema.data()[c * D + d];
                out.present[c] = true;
            }
        return out;
    }
};

} // namespace scdl

#endif
