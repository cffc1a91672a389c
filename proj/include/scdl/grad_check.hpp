#ifndef SCDL_GRAD_CHECK_HPP
#define SCDL_GRAD_CHECK_HPP

#include <functional>
#include <vector>

#include "scdl/tensor.hpp"

namespace scdl {

// Central-difference gradient verification.
//
// `f` must be a deterministic scalar-valued function of the leaf tensors'
// current data (re-evaluated many times with perturbed entries). Returns
// max over all coordinates of
//   |analytic - fd| / max(1, |analytic|, |fd|).
inline double grad_check(const std::function<Tensor()>& f,
                         const std::vector<Tensor>& leaves,
                         double step = 1e-6) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");

    Tensor out = f();
    double base = out.item();
    backward(out);
    {
        Tensor again = f();
        if (again.item() != base)
            throw std::runtime_error("grad_check: function is not deterministic");
    }

    std::vector<std::vector<double>> analytic;
    for (const auto& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad()
                                           : std::vector<double>(leaf.data().size(), 0.0));

    double max_err = 0.0;
    for (std::size_t t = 0; t < leaves.size(); ++t) {
        Tensor leaf = leaves[t];
        for (std::size_t i = 0; i < leaf.data().size(); ++i) {
            double orig = leaf.data()[i];
            leaf.data()[i] = orig + step;
            double fp = f().item();
            leaf.data()[i] = orig - step;
            double fm = f().item();
            leaf.data()[i] = orig;
            double fd = (fp - fm) / (2.0 * step);
            double a = analytic[t][i];
            double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

inline double grad_check(const std::function<Tensor()>& f, const Tensor& x,
                         double step = 1e-6) {
    return grad_check(f, std::vector<Tensor>{x}, step);
}

// Same check restricted to selected coordinates (leaf index, flat offset).
// Used for deep compositions where perturbing every parameter is wasteful.
inline double grad_check_subset(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& leaves,
                                const std::vector<std::pair<std::size_t, std::size_t>>& coords,
                                double step = 1e-6) {
    if (step <= 0.0) throw std::invalid_argument("grad_check: step must be positive");
    Tensor out = f();
    backward(out);
    std::vector<std::vector<double>> analytic;
    for (const auto& leaf : leaves)
        analytic.push_back(leaf.has_grad() ? leaf.grad()
                                           : std::vector<double>(leaf.data().size(), 0.0));
    double max_err = 0.0;
    for (auto [t, i] : coords) {
        Tensor leaf = leaves.at(t);
        double orig = leaf.data().at(i);
        leaf.data()[i] = orig + step;
        double fp = f().item();
        leaf.data()[i] = orig - step;
        double fm = f().item();
        leaf.data()[i] = orig;
        double fd = (fp - fm) / (2.0 * step);
        double a = analytic[t][i];
        double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace scdl

#endif
