#ifndef SCDL_PROXY_HPP
#define SCDL_PROXY_HPP

#include "scdl/tensor.hpp"

namespace scdl {

inline constexpr double kLogSigmaMin = -20.0;
inline constexpr double kLogSigmaMax = 2.0;

// Learnable per-class Gaussian proxies N(mu_c, diag(sigma_c^2)).
// sigma is stored as log_sigma and exponentiated on use, so it stays
// strictly positive; log_sigma is clamped to [kLogSigmaMin, kLogSigmaMax].
struct ProxyBank {
    Tensor mu;        // C x D
    Tensor log_sigma; // C x D
    std::int64_t C = 0;
    std::int64_t D = 0;

    static ProxyBank init(std::int64_t C, std::int64_t D, Rng& rng) {
        ProxyBank bank;
        bank.C = C;
        bank.D = D;
        // unit-scale cosines at start, nondegenerate sampling
        bank.mu = Tensor::randn({C, D}, rng, 1.0 / std::sqrt(static_cast<double>(D)), true);
        bank.log_sigma = Tensor::zeros({C, D}, true);
        for (std::int64_t c = 0; c < C; ++c) {
            double n = 0.0;
            for (std::int64_t d = 0; d < D; ++d) {
                double v = bank.mu.data()[c * D + d];
                n += v * v;
            }
            if (n == 0.0)
                throw std::runtime_error("ProxyBank::init: degenerate zero mean row");
        }
        return bank;
    }

    Tensor sigma() const { return exp(clamp(log_sigma, kLogSigmaMin, kLogSigmaMax)); }
};

// Token batch Z (B x L x D) with its spatial token grid.
struct TokenBatch {
    Tensor Z;
    std::int64_t grid_h = 0;
    std::int64_t grid_w = 0;

    TokenBatch() = default;
    TokenBatch(Tensor z, std::int64_t h, std::int64_t w) : Z(std::move(z)), grid_h(h), grid_w(w) {
        if (Z.shape().size() != 3)
            throw std::invalid_argument("TokenBatch: Z must be B x L x D");
        if (Z.dim(1) != h * w)
            throw std::invalid_argument("TokenBatch: L must equal grid_h * grid_w");
    }

    std::int64_t batch() const { return Z.dim(0); }
    std::int64_t tokens() const { return Z.dim(1); }
    std::int64_t width() const { return Z.dim(2); }
};

inline void check_dims(const TokenBatch& Z, const ProxyBank& bank) {
    if (Z.width() != bank.D)
        throw std::invalid_argument("embedding width mismatch: tokens D=" +
                                    std::to_string(Z.width()) + " vs proxies D=" +
                                    std::to_string(bank.D));
}

// P[i,l,c] = softmax_c cos(z_{i,l}, mu_c), no temperature.
inline Tensor soft_assign(const TokenBatch& Z, const ProxyBank& bank) {
    check_dims(Z, bank);
    return softmax(cosine_pairwise(Z.Z, bank.mu), 2);
}

// Embedding-to-proxy alignment, canonical sum form:
//   sum_{i,l,c} P[i,l,c] * (1 - cos(z_{i,l}, mu_c))
inline Tensor loss_e2p(const TokenBatch& Z, const ProxyBank& bank, const Tensor& P) {
    check_dims(Z, bank);
    Tensor cos = cosine_pairwise(Z.Z, bank.mu);
    if (P.shape() != cos.shape())
        throw std::invalid_argument("loss_e2p: assignment shape mismatch");
    return sum(mul(P, rsub(1.0, cos)));
}

// Mean-normalized variant for the trainer (divide by B*L).
inline Tensor loss_e2p_mean(const TokenBatch& Z, const ProxyBank& bank, const Tensor& P) {
    double bl = static_cast<double>(Z.batch() * Z.tokens());
    return div(loss_e2p(Z, bank, P), bl);
}

// Proxy-to-embedding alignment:
//   m_c = E_{i,l}[ (2 P[i,l,c] - 1) cos(z_{i,l}, mu_c) ]
//   loss = (1/C) sum_c exp(-m_c)
inline Tensor loss_p2e(const TokenBatch& Z, const ProxyBank& bank, const Tensor& P) {
    check_dims(Z, bank);
    if (Z.batch() * Z.tokens() < 1)
        throw std::invalid_argument("loss_p2e: empty token set");
    Tensor cos = cosine_pairwise(Z.Z, bank.mu);
    Tensor margins = mean(mul(sub(mul(P, 2.0), 1.0), cos), {0, 1}); // C
    return mean(exp(neg(margins)));
}

// Reparameterized draws u_c^s = mu_c + sigma_c * eps, eps ~ N(0, I).
// Gradients flow to mu and log_sigma; the draws themselves are constants.
inline Tensor sample_proxies(const ProxyBank& bank, std::int64_t S, Rng& rng) {
    if (S < 1) throw std::invalid_argument("sample_proxies: S must be >= 1");
    Tensor eps = Tensor::randn({bank.C, S, bank.D}, rng);
    Tensor mu3 = reshape(bank.mu, {bank.C, 1, bank.D});
    Tensor sigma3 = reshape(bank.sigma(), {bank.C, 1, bank.D});
    return add(mu3, mul(sigma3, eps));
}

} // namespace scdl

#endif
