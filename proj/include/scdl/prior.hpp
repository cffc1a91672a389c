#ifndef SCDL_PRIOR_HPP
#define SCDL_PRIOR_HPP

#include "scdl/conv.hpp"
#include "scdl/proxy.hpp"
#include "scdl/tensor.hpp"

namespace scdl {

inline constexpr double kLogEtaMin = -20.0;
inline constexpr double kLogEtaMax = 2.0;

// Projection + perturbation parameters for prior fusion.
struct FusionHead {
    Tensor proj_w;  // 3D x D'
    Tensor proj_b;  // D'
    Tensor log_eta; // D, noise scale stored as log
    std::int64_t K = 4;

    static FusionHead init(std::int64_t D, std::int64_t D_out, std::int64_t K, Rng& rng) {
        FusionHead head;
        // zero-init: injection starts as a no-op and phases in as the
        // projection learns, so enabling priors never destabilizes early steps
        head.proj_w = Tensor::zeros({3 * D, D_out}, true);
        head.proj_b = Tensor::zeros({D_out}, true);
        head.log_eta = Tensor::filled({D}, std::log(0.1), true);
        head.K = K;
        return head;
    }

    Tensor eta() const { return exp(clamp(log_eta, kLogEtaMin, kLogEtaMax)); }
};

// The three token-wise priors plus their fusion.
struct PriorBundle {
    Tensor r_dist;   // B x L x D
    Tensor r_center; // B x L x D
    Tensor z_sam;    // B x L x D
    Tensor z_prior;  // B x L x 3D
};

// r_dist[i,l] = sum_c softmax_c( (1/S) sum_s cos(z_{i,l}, u_c^s) ) * mu_c
// where samples is the C x S x D output of sample_proxies.
inline Tensor prior_dist(const TokenBatch& Z, const ProxyBank& bank, const Tensor& samples) {
    check_dims(Z, bank);
    const Shape& ss = samples.shape();
    if (ss.size() != 3 || ss[0] != bank.C || ss[2] != bank.D)
        throw std::invalid_argument("prior_dist: samples must be C x S x D for this bank");
    std::int64_t S = ss[1];
    std::int64_t B = Z.batch(), L = Z.tokens();
    Tensor cos = cosine_pairwise(Z.Z, reshape(samples, {bank.C * S, bank.D})); // B x L x C*S
    Tensor avg = mean(reshape(cos, {B, L, bank.C, S}), {3});                   // B x L x C
    Tensor w = softmax(avg, 2);
    return reshape(matmul(reshape(w, {B * L, bank.C}), bank.mu), {B, L, bank.D});
}

// r_center[i,l] = sum_c softmax_c(cos(z_{i,l}, mu_c)) * mu_c; the weights are
// exactly soft_assign(Z, bank).
inline Tensor prior_center(const TokenBatch& Z, const ProxyBank& bank) {
    check_dims(Z, bank);
    std::int64_t B = Z.batch(), L = Z.tokens();
    Tensor w = soft_assign(Z, bank);
    return reshape(matmul(reshape(w, {B * L, bank.C}), bank.mu), {B, L, bank.D});
}

// z_sam[i,l] = (1/K) sum_k normalize(z_{i,l} + eta * eps_k)
inline Tensor prior_token_sampling(const TokenBatch& Z, const FusionHead& head, Rng& rng) {
    if (head.K < 1) throw std::invalid_argument("prior_token_sampling: K must be >= 1");
    std::int64_t B = Z.batch(), L = Z.tokens(), D = Z.width();
    Tensor eta = head.eta();
    Tensor acc;
    for (std::int64_t k = 0; k < head.K; ++k) {
        Tensor eps = Tensor::randn({B, L, D}, rng);
        Tensor sample = l2_normalize_lastdim(add(Z.Z, mul(eta, eps)));
        acc = k == 0 ? sample : add(acc, sample);
    }
    return div(acc, static_cast<double>(head.K));
}

// Exact feature-axis concatenation (r_dist, r_center, z_sam).
inline Tensor fuse_priors(const Tensor& r_dist, const Tensor& r_center, const Tensor& z_sam) {
    if (r_dist.shape() != r_center.shape() || r_dist.shape() != z_sam.shape())
        throw std::invalid_argument("fuse_priors: prior shapes must match");
    return concat({r_dist, r_center, z_sam}, 2);
}

inline PriorBundle build_priors(const TokenBatch& Z, const ProxyBank& bank,
                                const FusionHead& head, std::int64_t S, Rng& rng) {
    PriorBundle out;
    out.r_dist = prior_dist(Z, bank, sample_proxies(bank, S, rng));
    out.r_center = prior_center(Z, bank);
    out.z_sam = prior_token_sampling(Z, head, rng);
    out.z_prior = fuse_priors(out.r_dist, out.r_center, out.z_sam);
    return out;
}

struct StageShape {
    std::int64_t h, w, channels;
};

// Project the fused prior to decoder width, reshape to the token grid and
// nearest-neighbor resize to each decoder stage. The decoder adds each map
// to its stage input.
inline std::vector<Tensor> project_and_inject(const Tensor& z_prior, const TokenBatch& Z,
                                              const FusionHead& head,
                                              const std::vector<StageShape>& stages) {
    const Shape& s = z_prior.shape();
    if (s.size() != 3) throw std::invalid_argument("project_and_inject: z_prior must be 3D");
    std::int64_t B = s[0], L = s[1], F = s[2];
    if (F != head.proj_w.dim(0))
        throw std::invalid_argument("project_and_inject: fused width mismatch with projection");
    if (L != Z.grid_h * Z.grid_w)
        throw std::invalid_argument("project_and_inject: token grid mismatch");
    std::int64_t Dp = head.proj_w.dim(1);

    Tensor proj = add(matmul(reshape(z_prior, {B * L, F}), head.proj_w), head.proj_b);
    Tensor grid = map_from_tokens(reshape(proj, {B, L, Dp}), Z.grid_h, Z.grid_w);

    std::vector<Tensor> maps;
    for (const auto& st : stages) {
        if (st.channels != Dp)
            throw std::invalid_argument("project_and_inject: stage channel width mismatch");
        if (st.h % Z.grid_h != 0 || st.w % Z.grid_w != 0 ||
            st.h / Z.grid_h != st.w / Z.grid_w)
            throw std::invalid_argument("project_and_inject: stage shape not an integer-factor resize of the token grid");
        maps.push_back(upsample_nearest(grid, st.h / Z.grid_h));
    }
    return maps;
}

} // namespace scdl

#endif
