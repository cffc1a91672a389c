#ifndef SCDL_NET_HPP
#define SCDL_NET_HPP

#include <string>
#include <utility>
#include <vector>

#include "scdl/conv.hpp"
#include "scdl/prior.hpp"
#include "scdl/proxy.hpp"
#include "scdl/tensor.hpp"

namespace scdl {

// Small encoder-decoder for the desk-scale harness.
//
// encoder: two strided 3x3 convs, 1 -> 16 -> D channels, stride 4 overall;
// the D-channel map doubles as the token grid (B x L x D).
// decoder: entry conv D -> W_dec, then two conv+upsample stages back to the
// input resolution, producing C logits. Each stage input can receive an
// additive prior map of matching shape.
struct SegNet {
    std::int64_t D = 32;      // token embedding width
    std::int64_t W_dec = 16;  // decoder channel width
    std::int64_t C = 4;

    Tensor enc1_w, enc1_b; // 16 x 1 x 3 x 3
    Tensor enc2_w, enc2_b; // D x 16 x 3 x 3
    Tensor dec0_w, dec0_b; // W_dec x D x 3 x 3 (decoder entry)
    Tensor dec1_w, dec1_b; // W_dec x W_dec x 3 x 3
    Tensor dec2_w, dec2_b; // C x W_dec x 3 x 3

    static SegNet init(std::int64_t C, std::int64_t D, std::int64_t W_dec, Rng& rng) {
        SegNet net;
        net.C = C;
        net.D = D;
        net.W_dec = W_dec;
        auto he = [&rng](Shape s, std::int64_t fan_in) {
            return Tensor::randn(std::move(s), rng, std::sqrt(2.0 / static_cast<double>(fan_in)), true);
        };
        net.enc1_w = he({16, 1, 3, 3}, 9);
        net.enc1_b = Tensor::zeros({16}, true);
        net.enc2_w = he({D, 16, 3, 3}, 16 * 9);
        net.enc2_b = Tensor::zeros({D}, true);
        net.dec0_w = he({W_dec, D, 3, 3}, D * 9);
        net.dec0_b = Tensor::zeros({W_dec}, true);
        net.dec1_w = he({W_dec, W_dec, 3, 3}, W_dec * 9);
        net.dec1_b = Tensor::zeros({W_dec}, true);
        net.dec2_w = he({C, W_dec, 3, 3}, W_dec * 9);
        net.dec2_b = Tensor::zeros({C}, true);
        return net;
    }

    // images: B x 1 x H x W -> D-channel feature map at stride 4
    Tensor encode_map(const Tensor& images) const {
        Tensor h1 = relu(conv2d(images, enc1_w, enc1_b, 2));
        return relu(conv2d(h1, enc2_w, enc2_b, 2));
    }

    TokenBatch tokens(const Tensor& feat) const {
        return TokenBatch(tokens_from_map(feat), feat.dim(2), feat.dim(3));
    }

    TokenBatch encode(const Tensor& images) const { return tokens(encode_map(images)); }

    // Decoder stage input shapes for prior injection, given the token grid.
    std::vector<StageShape> stage_shapes(std::int64_t grid_h, std::int64_t grid_w) const {
        return {{grid_h, grid_w, W_dec}, {grid_h * 2, grid_w * 2, W_dec}};
    }

    // feat: B x D x H' x W'; injections, when given, must match stage_shapes.
    Tensor decode(const Tensor& feat, const std::vector<Tensor>& injections = {}) const {
        Tensor s1_in = relu(conv2d(feat, dec0_w, dec0_b, 1));
        if (!injections.empty()) s1_in = add(s1_in, injections[0]);
        Tensor s2_in = upsample_nearest(relu(conv2d(s1_in, dec1_w, dec1_b, 1)), 2);
        if (!injections.empty()) s2_in = add(s2_in, injections[1]);
        return upsample_nearest(conv2d(s2_in, dec2_w, dec2_b, 1), 2);
    }

    Tensor forward(const Tensor& images, const std::vector<Tensor>& injections = {}) const {
        return decode(encode_map(images), injections);
    }

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        return {{"net.enc1.w", enc1_w}, {"net.enc1.b", enc1_b},
                {"net.enc2.w", enc2_w}, {"net.enc2.b", enc2_b},
                {"net.dec0.w", dec0_w}, {"net.dec0.b", dec0_b},
                {"net.dec1.w", dec1_w}, {"net.dec1.b", dec1_b},
                {"net.dec2.w", dec2_w}, {"net.dec2.b", dec2_b}};
    }
};

} // namespace scdl

#endif
