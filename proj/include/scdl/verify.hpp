#ifndef SCDL_VERIFY_HPP
#define SCDL_VERIFY_HPP

#include <string>
#include <vector>

#include "scdl/anchor.hpp"
#include "scdl/grad_check.hpp"
#include "scdl/prior.hpp"
#include "scdl/proxy.hpp"
#include "scdl/train.hpp"

namespace scdl {

// Finite-difference verification of every loss and prior, on small random
// instances. Non-scalar outputs are contracted against fixed random weights
// so every output coordinate participates.
struct VerifyReport {
    struct Entry {
        std::string name;
        double max_rel_error;
        double tolerance;
        bool pass() const { return max_rel_error < tolerance; }
    };
    std::vector<Entry> entries;

    bool all_pass() const {
        for (const auto& e : entries)
            if (!e.pass()) return false;
        return true;
    }
};

namespace detail_verify {

struct Instance {
    TokenBatch tokens;
    ProxyBank bank;
    FusionHead head;
    Tensor contract_d; // B x L x D weights for contracting vector outputs

    static Instance make(std::uint64_t seed, std::int64_t B = 2, std::int64_t L = 4,
                         std::int64_t C = 3, std::int64_t D = 5) {
        Rng rng(seed);
        Instance inst;
        Tensor Z = Tensor::randn({B, L, D}, rng, 0.5, true);
        inst.tokens = TokenBatch(Z, L, 1);
        inst.bank = ProxyBank::init(C, D, rng);
        inst.head = FusionHead::init(D, 4, 3, rng);
        // the projection zero-initializes; perturb it so its gradient paths
        // are exercised
        for (auto& v : inst.head.proj_w.data()) v = rng.normal() * 0.3;
        inst.contract_d = Tensor::randn({B, L, D}, rng, 1.0);
        return inst;
    }

    std::vector<Tensor> leaves() const {
        return {tokens.Z, bank.mu, bank.log_sigma, head.log_eta, head.proj_w, head.proj_b};
    }
};

inline Tensor contract(const Tensor& x, const Tensor& w) { return sum(mul(x, w)); }

} // namespace detail_verify

inline VerifyReport run_gradient_suite(std::uint64_t seed = 7) {
    using detail_verify::Instance;
    using detail_verify::contract;
    VerifyReport report;

    {
        Instance inst = Instance::make(seed);
        auto f = [&] {
            Tensor P = soft_assign(inst.tokens, inst.bank);
            return loss_e2p(inst.tokens, inst.bank, P);
        };
        report.entries.push_back(
            {"loss_e2p", grad_check(f, {inst.tokens.Z, inst.bank.mu}), 1e-4});
    }
    {
        Instance inst = Instance::make(seed + 1);
        auto f = [&] {
            Tensor P = soft_assign(inst.tokens, inst.bank);
            return loss_p2e(inst.tokens, inst.bank, P);
        };
        report.entries.push_back(
            {"loss_p2e", grad_check(f, {inst.tokens.Z, inst.bank.mu}), 1e-4});
    }
    {
        Instance inst = Instance::make(seed + 2);
        Rng arng(seed + 100);
        AnchorSet anchors;
        anchors.anchors = Tensor::randn({inst.bank.C, inst.bank.D}, arng);
        anchors.present.assign(inst.bank.C, true);
        anchors.present[0] = false; // background has no anchor
        anchors.counts.assign(inst.bank.C, 3);
        anchors.counts[0] = 0;
        auto f = [&] { return loss_sac(inst.bank, anchors); };
        report.entries.push_back(
            {"loss_sac", grad_check(f, {inst.bank.mu, inst.bank.log_sigma}), 1e-4});
    }
    {
        Instance inst = Instance::make(seed + 3);
        auto f = [&] {
            Rng mc(seed + 200); // frozen draws: FD sees a deterministic function
            Tensor samples = sample_proxies(inst.bank, 4, mc);
            return contract(prior_dist(inst.tokens, inst.bank, samples), inst.contract_d);
        };
        report.entries.push_back(
            {"prior_dist", grad_check(f, {inst.tokens.Z, inst.bank.mu, inst.bank.log_sigma}),
             1e-4});
    }
    {
        Instance inst = Instance::make(seed + 4);
        auto f = [&] {
            return contract(prior_center(inst.tokens, inst.bank), inst.contract_d);
        };
        report.entries.push_back(
            {"prior_center", grad_check(f, {inst.tokens.Z, inst.bank.mu}), 1e-4});
    }
    {
        Instance inst = Instance::make(seed + 5);
        auto f = [&] {
            Rng mc(seed + 300);
            return contract(prior_token_sampling(inst.tokens, inst.head, mc), inst.contract_d);
        };
        report.entries.push_back(
            {"prior_token_sampling", grad_check(f, {inst.tokens.Z, inst.head.log_eta}), 1e-4});
    }
    {
        Instance inst = Instance::make(seed + 6);
        Rng crng(seed + 400);
        Tensor contract_p = Tensor::randn({2 * 4, 4}, crng); // B*L x D'
        auto f = [&] {
            Rng mc(seed + 500);
            PriorBundle priors = build_priors(inst.tokens, inst.bank, inst.head, 3, mc);
            auto maps = project_and_inject(priors.z_prior, inst.tokens, inst.head,
                                           {{inst.tokens.grid_h, inst.tokens.grid_w, 4}});
            return sum(mul(tokens_from_map(maps[0]), reshape(contract_p, {2, 4, 4})));
        };
        report.entries.push_back({"fused_projection", grad_check(f, inst.leaves()), 1e-4});
    }
    {
        // composite train-step loss on a tiny harness, frozen rng,
        // random 20-parameter subset
        SyntheticDatasetSpec spec;
        spec.H = spec.W = 16;
        spec.N = 6;
        spec.labeled_fraction = 0.5;
        spec.seed = seed;
        Dataset ds = generate_dataset(spec);
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.batch_size = 4;
        cfg.token_width = 8;
        cfg.decoder_width = 6;
        cfg.proxy_samples = 3;
        cfg.perturb_samples = 2;
        Trainer trainer(ds, cfg);
        Batch batch = trainer.sample_batch();
        // anchors are detached constants in the loss, so they must stay fixed
        // while finite differences perturb the parameters
        AnchorSet anchors = trainer.batch_anchors(batch);
        auto f = [&]() -> Tensor {
            Rng mc(seed + 600);
            return trainer.composite_loss(batch, mc, nullptr, &anchors);
        };
        std::vector<Tensor> leaves;
        for (auto& [name, t] : trainer.named_params()) leaves.push_back(t);
        Rng pick(seed + 700);
        std::vector<std::pair<std::size_t, std::size_t>> coords;
        for (int k = 0; k < 20; ++k) {
            std::size_t li = pick.uniform_int(leaves.size());
            coords.emplace_back(li, pick.uniform_int(leaves[li].data().size()));
        }
        report.entries.push_back(
            {"composite_train_step", grad_check_subset(f, leaves, coords, 1e-5), 1e-3});
    }
    return report;
}

} // namespace scdl

#endif
