#ifndef SCDL_CONV_HPP
#define SCDL_CONV_HPP

#include "scdl/tensor.hpp"

namespace scdl {

// 3x3 convolution, zero padding 1, stride 1 or 2.
// x: B x Ci x H x W, w: Co x Ci x 3 x 3, b: Co
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4)
        throw std::invalid_argument("conv2d: expected 4D input and weight");
    if (sw[2] != 3 || sw[3] != 3)
        throw std::invalid_argument("conv2d: only 3x3 kernels supported");
    if (sx[1] != sw[1])
        throw std::invalid_argument("conv2d: channel mismatch");
    if (stride != 1 && stride != 2)
        throw std::invalid_argument("conv2d: stride must be 1 or 2");
    if (b.shape() != Shape{sw[0]})
        throw std::invalid_argument("conv2d: bias shape mismatch");

    std::int64_t B = sx[0], Ci = sx[1], H = sx[2], W = sx[3], Co = sw[0];
    std::int64_t Ho = (H + 2 - 3) / stride + 1;
    std::int64_t Wo = (W + 2 - 3) / stride + 1;

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    std::int64_t s = stride;

    Tensor out = detail::make_result({B, Co, Ho, Wo}, "conv2d", {xn, wn, bn},
        [xn, wn, bn, B, Ci, H, W, Co, Ho, Wo, s](Node& self) {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::int64_t bi = 0; bi < B; ++bi)
                for (std::int64_t o = 0; o < Co; ++o) {
                    const double* gout = self.grad.data() + ((bi * Co + o) * Ho) * Wo;
                    if (bn->requires_grad) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gout[i];
                        bn->grad[o] += acc;
                    }
                    for (std::int64_t ci = 0; ci < Ci; ++ci) {
                        const double* xin = xn->data.data() + ((bi * Ci + ci) * H) * W;
                        double* gx = xn->requires_grad
                                         ? xn->grad.data() + ((bi * Ci + ci) * H) * W
                                         : nullptr;
                        const double* wk = wn->data.data() + ((o * Ci + ci) * 3) * 3;
                        double* gw = wn->requires_grad
                                         ? wn->grad.data() + ((o * Ci + ci) * 3) * 3
                                         : nullptr;
                        for (std::int64_t oy = 0; oy < Ho; ++oy)
                            for (std::int64_t ox = 0; ox < Wo; ++ox) {
                                double g = gout[oy * Wo + ox];
                                if (g == 0.0) continue;
                                std::int64_t iy0 = oy * s - 1, ix0 = ox * s - 1;
                                for (int ky = 0; ky < 3; ++ky) {
                                    std::int64_t iy = iy0 + ky;
                                    if (iy < 0 || iy >= H) continue;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        std::int64_t ix = ix0 + kx;
                                        if (ix < 0 || ix >= W) continue;
                                        if (gx) gx[iy * W + ix] += g * wk[ky * 3 + kx];
                                        if (gw) gw[ky * 3 + kx] += g * xin[iy * W + ix];
                                    }
                                }
                            }
                    }
                }
        });

    auto& o = out.data();
    for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t oc = 0; oc < Co; ++oc) {
            double* dst = o.data() + ((bi * Co + oc) * Ho) * Wo;
            double bias = bn->data[oc];
            for (std::int64_t i = 0; i < Ho * Wo; ++i) dst[i] = bias;
            for (std::int64_t ci = 0; ci < Ci; ++ci) {
                const double* xin = xn->data.data() + ((bi * Ci + ci) * H) * W;
                const double* wk = wn->data.data() + ((oc * Ci + ci) * 3) * 3;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    std::int64_t iy0 = oy * s - 1;
                    for (int ky = 0; ky < 3; ++ky) {
                        std::int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= H) continue;
                        const double* xrow = xin + iy * W;
                        const double* wrow = wk + ky * 3;
                        double* drow = dst + oy * Wo;
                        for (std::int64_t ox = 0; ox < Wo; ++ox) {
                            std::int64_t ix0 = ox * s - 1;
                            double acc = 0.0;
                            if (ix0 >= 0) acc += wrow[0] * xrow[ix0];
                            if (ix0 + 1 < W) acc += wrow[1] * xrow[ix0 + 1];
                            if (ix0 + 2 < W) acc += wrow[2] * xrow[ix0 + 2];
                            drow[ox] += acc;
                        }
                    }
                }
            }
        }
    detail::check_finite(*out.node(), "conv2d");
    return out;
}

// Nearest-neighbor upsample by an integer factor. Factor 1 is identity.
inline Tensor upsample_nearest(const Tensor& x, std::int64_t factor) {
    const Shape& sx = x.shape();
    if (sx.size() != 4) throw std::invalid_argument("upsample_nearest: expected 4D input");
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    std::int64_t B = sx[0], C = sx[1], H = sx[2], W = sx[3];
    std::int64_t Ho = H * factor, Wo = W * factor;
    auto xn = x.node();
    Tensor out = detail::make_result({B, C, Ho, Wo}, "upsample", {xn},
        [xn, B, C, H, W, factor, Wo](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t bc = 0; bc < B * C; ++bc) {
                const double* g = self.grad.data() + bc * (H * factor) * Wo;
                double* gx = xn->grad.data() + bc * H * W;
                for (std::int64_t y = 0; y < H * factor; ++y)
                    for (std::int64_t x2 = 0; x2 < Wo; ++x2)
                        gx[(y / factor) * W + (x2 / factor)] += g[y * Wo + x2];
            }
        });
    auto& o = out.data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const double* src = xn->data.data() + bc * H * W;
        double* dst = o.data() + bc * Ho * Wo;
        for (std::int64_t y = 0; y < Ho; ++y)
            for (std::int64_t x2 = 0; x2 < Wo; ++x2)
                dst[y * Wo + x2] = src[(y / factor) * W + (x2 / factor)];
    }
    return out;
}

} // namespace scdl

#endif
