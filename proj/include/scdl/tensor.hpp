#ifndef SCDL_TENSOR_HPP
#define SCDL_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "scdl/rng.hpp"

namespace scdl {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

// Disables tape recording in a scope (anchor passes, evaluation).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    bool prev_;
};

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // sized lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantic handle onto a tape node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }

    static Tensor filled(Shape shape, double value, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data.assign(static_cast<std::size_t>(shape_numel(n->shape)), value);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        if (static_cast<std::int64_t>(values.size()) != shape_numel(n->shape))
            throw std::invalid_argument("from_data: value count does not match shape");
        n->data = std::move(values);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = stddev * rng.normal();
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
    std::int64_t dim(std::size_t i) const { return node_->shape[i]; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }

    double item() const {
        if (node_->data.size() != 1)
            throw std::invalid_argument("item: tensor is not scalar");
        return node_->data[0];
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

inline void check_finite(const Node& n, const char* op) {
    for (double v : n.data)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
}

inline Tensor make_result(Shape shape, const char* op,
                          std::vector<std::shared_ptr<Node>> parents,
                          std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<std::size_t>(shape_numel(n->shape)), 0.0);
    if (grad_mode()) {
        bool need = false;
        for (auto& p : parents)
            if (p->requires_grad) { need = true; break; }
        if (need) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(backward_fn);
        }
    }
    (void)op;
    return Tensor(std::move(n));
}

// Row-major strides; broadcast dims (extent 1) get stride 0.
inline std::vector<std::int64_t> broadcast_strides(const Shape& from, const Shape& to) {
    std::vector<std::int64_t> strides(to.size(), 0);
    std::int64_t s = 1;
    auto off = to.size() - from.size();
    for (std::size_t i = from.size(); i-- > 0;) {
        auto e = from[i];
        auto te = to[i + off];
        if (e != te && e != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(from) +
                                        " vs " + shape_str(to));
        strides[i + off] = (e == 1 && te != 1) ? 0 : s;
        s *= e;
    }
    return strides;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::int64_t ea = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        std::int64_t eb = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) +
                                        " vs " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Maps a linear index in `shape` through broadcast strides.
struct BroadcastIter {
    std::vector<std::int64_t> extents;
    std::vector<std::int64_t> sa, sb;
    std::int64_t total;

    BroadcastIter(const Shape& a, const Shape& b, const Shape& out)
        : extents(out), sa(broadcast_strides(a, out)), sb(broadcast_strides(b, out)),
          total(shape_numel(out)) {}

    template <typename F>
    void for_each(F&& f) const {
        std::size_t r = extents.size();
        std::vector<std::int64_t> idx(r, 0);
        std::int64_t oa = 0, ob = 0;
        for (std::int64_t lin = 0; lin < total; ++lin) {
            f(lin, oa, ob);
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                oa += sa[d];
                ob += sb[d];
                if (idx[d] < extents[d]) break;
                oa -= sa[d] * extents[d];
                ob -= sb[d] * extents[d];
                idx[d] = 0;
            }
        }
    }
};

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (numpy-style broadcasting)
// ---------------------------------------------------------------------------

namespace detail {

template <typename FwdF, typename BwdF>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdF fwd, BwdF bwd) {
    auto an = a.node();
    auto bn = b.node();
    if (an->shape == bn->shape) {
        Tensor out = make_result(an->shape, name, {an, bn},
            [an, bn, bwd](Node& self) {
                if (an->requires_grad) an->ensure_grad();
                if (bn->requires_grad) bn->ensure_grad();
                for (std::size_t i = 0; i < self.data.size(); ++i) {
                    double ga, gb;
                    bwd(an->data[i], bn->data[i], self.grad[i], ga, gb);
                    if (an->requires_grad) an->grad[i] += ga;
                    if (bn->requires_grad) bn->grad[i] += gb;
                }
            });
        auto& o = out.data();
        const auto& ad = an->data;
        const auto& bd = bn->data;
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(ad[i], bd[i]);
        check_finite(*out.node(), name);
        return out;
    }
    Shape os = broadcast_shape(an->shape, bn->shape);
    auto iter = std::make_shared<BroadcastIter>(an->shape, bn->shape, os);
    Tensor out = make_result(os, name, {an, bn},
        [an, bn, iter, bwd](Node& self) {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            iter->for_each([&](std::int64_t lin, std::int64_t oa, std::int64_t ob) {
                double ga, gb;
                bwd(an->data[oa], bn->data[ob], self.grad[lin], ga, gb);
                if (an->requires_grad) an->grad[oa] += ga;
                if (bn->requires_grad) bn->grad[ob] += gb;
            });
        });
    auto& o = out.data();
    iter->for_each([&](std::int64_t lin, std::int64_t oa, std::int64_t ob) {
        o[lin] = fwd(an->data[oa], bn->data[ob]);
    });
    check_finite(*out.node(), name);
    return out;
}

template <typename FwdF, typename BwdF>
Tensor unary_op(const Tensor& a, const char* name, FwdF fwd, BwdF bwd) {
    auto an = a.node();
    Tensor out = make_result(an->shape, name, {an},
        [an, bwd](Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < self.data.size(); ++i)
                an->grad[i] += bwd(an->data[i], self.data[i]) * self.grad[i];
        });
    auto& o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(an->data[i]);
    check_finite(*out.node(), name);
    return out;
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "add",
        [](double x, double y) { return x + y; },
        [](double, double, double g, double& ga, double& gb) { ga = g; gb = g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "sub",
        [](double x, double y) { return x - y; },
        [](double, double, double g, double& ga, double& gb) { ga = g; gb = -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "mul",
        [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& ga, double& gb) { ga = g * y; gb = g * x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op(a, b, "div",
        [](double x, double y) { return x / y; },
        [](double x, double y, double g, double& ga, double& gb) {
            ga = g / y;
            gb = -g * x / (y * y);
        });
}

inline Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
inline Tensor sub(const Tensor& a, double c) { return add(a, Tensor::scalar(-c)); }
inline Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
inline Tensor div(const Tensor& a, double c) { return mul(a, Tensor::scalar(1.0 / c)); }
inline Tensor rsub(double c, const Tensor& a) { return sub(Tensor::scalar(c), a); }

inline Tensor neg(const Tensor& a) {
    return detail::unary_op(a, "neg",
        [](double x) { return -x; },
        [](double, double) { return -1.0; });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(a, "exp",
        [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_op(a, "log",
        [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

inline Tensor pow(const Tensor& a, double p) {
    return detail::unary_op(a, "pow",
        [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, "relu",
        [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Gradient passes through inside the interval, zero outside.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
    return detail::unary_op(a, "clamp",
        [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    auto an = a.node();
    Tensor out = detail::make_result({1}, "sum", {an},
        [an](Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (auto& g : an->grad) g += self.grad[0];
        });
    double acc = 0.0;
    for (double v : an->data) acc += v;
    out.data()[0] = acc;
    detail::check_finite(*out.node(), "sum");
    return out;
}

inline Tensor mean(const Tensor& a) {
    return div(sum(a), static_cast<double>(a.numel()));
}

// Sum over a set of axes (no keepdim). Fixed sequential reduction order.
inline Tensor sum(const Tensor& a, std::vector<std::size_t> axes) {
    auto an = a.node();
    const Shape& s = an->shape;
    std::vector<bool> reduced(s.size(), false);
    for (auto ax : axes) {
        if (ax >= s.size()) throw std::invalid_argument("sum: axis out of range");
        reduced[ax] = true;
    }
    Shape os;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (!reduced[i]) os.push_back(s[i]);
    if (os.empty()) os = {1};

    // map from input linear index to output linear index
    std::vector<std::int64_t> in_stride(s.size()), out_stride(s.size(), 0);
    std::int64_t st = 1;
    for (std::size_t i = s.size(); i-- > 0;) { in_stride[i] = st; st *= s[i]; }
    std::int64_t ost = 1;
    for (std::size_t i = s.size(); i-- > 0;)
        if (!reduced[i]) { out_stride[i] = ost; ost *= s[i]; }

    auto index_map = std::make_shared<std::vector<std::int64_t>>(an->data.size());
    {
        std::vector<std::int64_t> idx(s.size(), 0);
        for (std::size_t lin = 0; lin < an->data.size(); ++lin) {
            std::int64_t o = 0;
            for (std::size_t d = 0; d < s.size(); ++d)
                if (!reduced[d]) o += idx[d] * out_stride[d];
            (*index_map)[lin] = o;
            for (std::size_t d = s.size(); d-- > 0;) {
                if (++idx[d] < s[d]) break;
                idx[d] = 0;
            }
        }
    }

    Tensor out = detail::make_result(os, "sum_axes", {an},
        [an, index_map](Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < an->data.size(); ++i)
                an->grad[i] += self.grad[(*index_map)[i]];
        });
    auto& o = out.data();
    for (std::size_t i = 0; i < an->data.size(); ++i)
        o[(*index_map)[i]] += an->data[i];
    detail::check_finite(*out.node(), "sum_axes");
    return out;
}

inline Tensor mean(const Tensor& a, std::vector<std::size_t> axes) {
    std::int64_t cnt = 1;
    for (auto ax : axes) cnt *= a.shape()[ax];
    return div(sum(a, std::move(axes)), static_cast<double>(cnt));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    auto an = a.node();
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: element count mismatch " +
                                    shape_str(a.shape()) + " -> " + shape_str(shape));
    Tensor out = detail::make_result(std::move(shape), "reshape", {an},
        [an](Node& self) {
            if (!an->requires_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < self.data.size(); ++i)
                an->grad[i] += self.grad[i];
        });
    out.data() = an->data;
    return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
    Shape os = s0;
    os[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != s0[d])
                throw std::invalid_argument("concat: shape mismatch on non-concat axis");
        os[axis] += s[axis];
    }
    std::int64_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= os[d];
    for (std::size_t d = axis + 1; d < os.size(); ++d) inner *= os[d];

    std::vector<std::shared_ptr<Node>> pn;
    for (const auto& p : parts) pn.push_back(p.node());
    auto axis_sizes = std::make_shared<std::vector<std::int64_t>>();
    for (const auto& p : parts) axis_sizes->push_back(p.shape()[axis]);
    std::int64_t total_axis = os[axis];

    Tensor out = detail::make_result(os, "concat", pn,
        [pn, axis_sizes, outer, inner, total_axis](Node& self) {
            std::int64_t off = 0;
            for (std::size_t k = 0; k < pn.size(); ++k) {
                auto& p = pn[k];
                std::int64_t ak = (*axis_sizes)[k];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::int64_t ot = 0; ot < outer; ++ot)
                        for (std::int64_t j = 0; j < ak * inner; ++j)
                            p->grad[ot * ak * inner + j] +=
                                self.grad[(ot * total_axis + off) * inner + j];
                }
                off += ak;
            }
        });
    auto& o = out.data();
    std::int64_t off = 0;
    for (std::size_t k = 0; k < pn.size(); ++k) {
        auto& p = pn[k];
        std::int64_t ak = (*axis_sizes)[k];
        for (std::int64_t ot = 0; ot < outer; ++ot)
            for (std::int64_t j = 0; j < ak * inner; ++j)
                o[(ot * total_axis + off) * inner + j] = p->data[ot * ak * inner + j];
        off += ak;
    }
    detail::check_finite(*out.node(), "concat");
    return out;
}

// B x D x H x W feature map -> B x (H*W) x D token matrix
inline Tensor tokens_from_map(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw std::invalid_argument("tokens_from_map: expected 4D input");
    std::int64_t B = s[0], D = s[1], H = s[2], W = s[3], L = H * W;
    auto xn = x.node();
    Tensor out = detail::make_result({B, L, D}, "tokens_from_map", {xn},
        [xn, B, D, L](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t d = 0; d < D; ++d)
                    for (std::int64_t l = 0; l < L; ++l)
                        xn->grad[(b * D + d) * L + l] += self.grad[(b * L + l) * D + d];
        });
    auto& o = out.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t l = 0; l < L; ++l)
                o[(b * L + l) * D + d] = xn->data[(b * D + d) * L + l];
    return out;
}

// B x L x D tokens -> B x D x H x W map, L must equal H*W
inline Tensor map_from_tokens(const Tensor& t, std::int64_t H, std::int64_t W) {
    const Shape& s = t.shape();
    if (s.size() != 3) throw std::invalid_argument("map_from_tokens: expected 3D input");
    std::int64_t B = s[0], L = s[1], D = s[2];
    if (L != H * W) throw std::invalid_argument("map_from_tokens: L != H*W");
    auto tn = t.node();
    Tensor out = detail::make_result({B, D, H, W}, "map_from_tokens", {tn},
        [tn, B, D, L](Node& self) {
            if (!tn->requires_grad) return;
            tn->ensure_grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t d = 0; d < D; ++d)
                    for (std::int64_t l = 0; l < L; ++l)
                        tn->grad[(b * L + l) * D + d] += self.grad[(b * D + d) * L + l];
        });
    auto& o = out.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t l = 0; l < L; ++l)
                o[(b * D + d) * L + l] = tn->data[(b * L + l) * D + d];
    return out;
}

// Masked selection: keep rows of an N x D matrix whose index appears in `rows`.
inline Tensor gather_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
    const Shape& s = x.shape();
    if (s.size() != 2) throw std::invalid_argument("gather_rows: expected 2D input");
    std::int64_t D = s[1];
    for (auto r : rows)
        if (r < 0 || r >= s[0]) throw std::invalid_argument("gather_rows: row out of range");
    auto xn = x.node();
    auto idx = std::make_shared<std::vector<std::int64_t>>(rows);
    std::int64_t K = static_cast<std::int64_t>(rows.size());
    Tensor out = detail::make_result({K, D}, "gather_rows", {xn},
        [xn, idx, D](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t k = 0; k < idx->size(); ++k)
                for (std::int64_t d = 0; d < D; ++d)
                    xn->grad[(*idx)[k] * D + d] += self.grad[k * D + d];
        });
    auto& o = out.data();
    for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::int64_t d = 0; d < D; ++d)
            o[k * D + d] = xn->data[rows[k] * D + d];
    return out;
}

// Constant copy: severs the tape, gradients do not flow past it.
inline Tensor detach(const Tensor& a) {
    auto n = std::make_shared<Node>();
    n->shape = a.shape();
    n->data = a.data();
    n->requires_grad = false;
    return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// linear algebra / softmax / cosine
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(sa) + " x " + shape_str(sb));
    std::int64_t M = sa[0], K = sa[1], N = sb[1];
    auto an = a.node();
    auto bn = b.node();
    Tensor out = detail::make_result({M, N}, "matmul", {an, bn},
        [an, bn, M, K, N](Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::int64_t m = 0; m < M; ++m)
                    for (std::int64_t n = 0; n < N; ++n) {
                        double g = self.grad[m * N + n];
                        for (std::int64_t k = 0; k < K; ++k)
                            an->grad[m * K + k] += g * bn->data[k * N + n];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::int64_t m = 0; m < M; ++m)
                    for (std::int64_t k = 0; k < K; ++k) {
                        double av = an->data[m * K + k];
                        for (std::int64_t n = 0; n < N; ++n)
                            bn->grad[k * N + n] += av * self.grad[m * N + n];
                    }
            }
        });
    auto& o = out.data();
    for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t k = 0; k < K; ++k) {
            double av = an->data[m * K + k];
            if (av == 0.0) continue;
            for (std::int64_t n = 0; n < N; ++n)
                o[m * N + n] += av * bn->data[k * N + n];
        }
    detail::check_finite(*out.node(), "matmul");
    return out;
}

namespace detail {
// outer/inner decomposition around one axis
struct AxisView {
    std::int64_t outer, axis, inner;
    AxisView(const Shape& s, std::size_t ax) {
        if (ax >= s.size()) throw std::invalid_argument("axis out of range");
        outer = 1;
        inner = 1;
        axis = s[ax];
        for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
        for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
    }
};
} // namespace detail

inline Tensor softmax(const Tensor& x, std::size_t axis) {
    detail::AxisView v(x.shape(), axis);
    if (v.axis == 0) throw std::invalid_argument("softmax: empty axis");
    auto xn = x.node();
    Tensor out = detail::make_result(x.shape(), "softmax", {xn},
        [xn, v](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t ot = 0; ot < v.outer; ++ot)
                for (std::int64_t in = 0; in < v.inner; ++in) {
                    double dot = 0.0;
                    for (std::int64_t k = 0; k < v.axis; ++k) {
                        std::int64_t i = (ot * v.axis + k) * v.inner + in;
                        dot += self.grad[i] * self.data[i];
                    }
                    for (std::int64_t k = 0; k < v.axis; ++k) {
                        std::int64_t i = (ot * v.axis + k) * v.inner + in;
                        xn->grad[i] += self.data[i] * (self.grad[i] - dot);
                    }
                }
        });
    auto& o = out.data();
    for (std::int64_t ot = 0; ot < v.outer; ++ot)
        for (std::int64_t in = 0; in < v.inner; ++in) {
            double mx = -1e300;
            for (std::int64_t k = 0; k < v.axis; ++k)
                mx = std::max(mx, xn->data[(ot * v.axis + k) * v.inner + in]);
            double z = 0.0;
            for (std::int64_t k = 0; k < v.axis; ++k) {
                std::int64_t i = (ot * v.axis + k) * v.inner + in;
                o[i] = std::exp(xn->data[i] - mx);
                z += o[i];
            }
            for (std::int64_t k = 0; k < v.axis; ++k)
                o[(ot * v.axis + k) * v.inner + in] /= z;
        }
    detail::check_finite(*out.node(), "softmax");
    return out;
}

inline Tensor log_softmax(const Tensor& x, std::size_t axis) {
    detail::AxisView v(x.shape(), axis);
    if (v.axis == 0) throw std::invalid_argument("log_softmax: empty axis");
    auto xn = x.node();
    Tensor out = detail::make_result(x.shape(), "log_softmax", {xn},
        [xn, v](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t ot = 0; ot < v.outer; ++ot)
                for (std::int64_t in = 0; in < v.inner; ++in) {
                    double gsum = 0.0;
                    for (std::int64_t k = 0; k < v.axis; ++k)
                        gsum += self.grad[(ot * v.axis + k) * v.inner + in];
                    for (std::int64_t k = 0; k < v.axis; ++k) {
                        std::int64_t i = (ot * v.axis + k) * v.inner + in;
                        xn->grad[i] += self.grad[i] - std::exp(self.data[i]) * gsum;
                    }
                }
        });
    auto& o = out.data();
    for (std::int64_t ot = 0; ot < v.outer; ++ot)
        for (std::int64_t in = 0; in < v.inner; ++in) {
            double mx = -1e300;
            for (std::int64_t k = 0; k < v.axis; ++k)
                mx = std::max(mx, xn->data[(ot * v.axis + k) * v.inner + in]);
            double z = 0.0;
            for (std::int64_t k = 0; k < v.axis; ++k)
                z += std::exp(xn->data[(ot * v.axis + k) * v.inner + in] - mx);
            double lz = mx + std::log(z);
            for (std::int64_t k = 0; k < v.axis; ++k) {
                std::int64_t i = (ot * v.axis + k) * v.inner + in;
                o[i] = xn->data[i] - lz;
            }
        }
    detail::check_finite(*out.node(), "log_softmax");
    return out;
}

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kNormEps = 1e-12;

// L2 norm over the last axis: (..., D) -> (...)
inline Tensor l2_norm_lastdim(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.empty()) throw std::invalid_argument("l2_norm_lastdim: rank 0");
    std::int64_t D = s.back();
    std::int64_t R = x.numel() / D;
    Shape os(s.begin(), s.end() - 1);
    if (os.empty()) os = {1};
    auto xn = x.node();
    Tensor out = detail::make_result(os, "l2_norm", {xn},
        [xn, R, D](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t r = 0; r < R; ++r) {
                double n = self.data[r];
                if (n < kNormEps) continue;
                double g = self.grad[r] / n;
                for (std::int64_t d = 0; d < D; ++d)
                    xn->grad[r * D + d] += g * xn->data[r * D + d];
            }
        });
    auto& o = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        double acc = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double v = xn->data[r * D + d];
            acc += v * v;
        }
        o[r] = std::sqrt(acc);
    }
    detail::check_finite(*out.node(), "l2_norm");
    return out;
}

// y = x / (||x|| + eps), rowwise over the last axis
inline Tensor l2_normalize_lastdim(const Tensor& x) {
    const Shape& s = x.shape();
    std::int64_t D = s.back();
    std::int64_t R = x.numel() / D;
    auto xn = x.node();
    Tensor out = detail::make_result(s, "l2_normalize", {xn},
        [xn, R, D](Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t r = 0; r < R; ++r) {
                double nsq = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    double v = xn->data[r * D + d];
                    nsq += v * v;
                }
                double n = std::sqrt(nsq);
                double den = n + kNormEps;
                double xg = 0.0;
                for (std::int64_t d = 0; d < D; ++d)
                    xg += xn->data[r * D + d] * self.grad[r * D + d];
                for (std::int64_t d = 0; d < D; ++d) {
                    double g = self.grad[r * D + d] / den;
                    if (n > kNormEps)
                        g -= xn->data[r * D + d] * xg / (n * den * den);
                    xn->grad[r * D + d] += g;
                }
            }
        });
    auto& o = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        double nsq = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double v = xn->data[r * D + d];
            nsq += v * v;
        }
        double den = std::sqrt(nsq) + kNormEps;
        for (std::int64_t d = 0; d < D; ++d)
            o[r * D + d] = xn->data[r * D + d] / den;
    }
    detail::check_finite(*out.node(), "l2_normalize");
    return out;
}

// cos(a_row, b_row) over the last axis for equal-shape inputs: (..., D) -> (...)
// cos = <a,b> / (||a||*||b|| + eps)
inline Tensor cosine_lastdim(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("cosine_lastdim: shape mismatch");
    std::int64_t D = a.shape().back();
    std::int64_t R = a.numel() / D;
    Shape os(a.shape().begin(), a.shape().end() - 1);
    if (os.empty()) os = {1};
    auto an = a.node();
    auto bn = b.node();
    Tensor out = detail::make_result(os, "cosine", {an, bn},
        [an, bn, R, D](Node& self) {
            for (std::int64_t r = 0; r < R; ++r) {
                double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    double av = an->data[r * D + d], bv = bn->data[r * D + d];
                    dot += av * bv;
                    na2 += av * av;
                    nb2 += bv * bv;
                }
                double na = std::sqrt(na2), nb = std::sqrt(nb2);
                double den = na * nb + kCosineEps;
                double g = self.grad[r];
                if (an->requires_grad) {
                    an->ensure_grad();
                    for (std::int64_t d = 0; d < D; ++d) {
                        double av = an->data[r * D + d], bv = bn->data[r * D + d];
                        double t = bv / den;
                        if (na > kNormEps) t -= dot * nb * av / (na * den * den);
                        an->grad[r * D + d] += g * t;
                    }
                }
                if (bn->requires_grad) {
                    bn->ensure_grad();
                    for (std::int64_t d = 0; d < D; ++d) {
                        double av = an->data[r * D + d], bv = bn->data[r * D + d];
                        double t = av / den;
                        if (nb > kNormEps) t -= dot * na * bv / (nb * den * den);
                        bn->grad[r * D + d] += g * t;
                    }
                }
            }
        });
    auto& o = out.data();
    for (std::int64_t r = 0; r < R; ++r) {
        double dot = 0.0, na2 = 0.0, nb2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double av = an->data[r * D + d], bv = bn->data[r * D + d];
            dot += av * bv;
            na2 += av * av;
            nb2 += bv * bv;
        }
        o[r] = dot / (std::sqrt(na2) * std::sqrt(nb2) + kCosineEps);
    }
    detail::check_finite(*out.node(), "cosine");
    return out;
}

// Pairwise cosine between token rows and reference rows:
// a: (..., D) flattened to R x D, m: C x D  ->  (..., C)
inline Tensor cosine_pairwise(const Tensor& a, const Tensor& m) {
    const Shape& sa = a.shape();
    const Shape& sm = m.shape();
    if (sm.size() != 2) throw std::invalid_argument("cosine_pairwise: refs must be 2D");
    if (sa.back() != sm[1])
        throw std::invalid_argument("cosine_pairwise: feature width mismatch");
    std::int64_t D = sm[1], C = sm[0];
    std::int64_t R = a.numel() / D;
    Shape os(sa.begin(), sa.end() - 1);
    os.push_back(C);
    auto an = a.node();
    auto mn = m.node();
    Tensor out = detail::make_result(os, "cosine_pairwise", {an, mn},
        [an, mn, R, C, D](Node& self) {
            std::vector<double> mnorm(C);
            for (std::int64_t c = 0; c < C; ++c) {
                double acc = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    double v = mn->data[c * D + d];
                    acc += v * v;
                }
                mnorm[c] = std::sqrt(acc);
            }
            if (an->requires_grad) an->ensure_grad();
            if (mn->requires_grad) mn->ensure_grad();
            for (std::int64_t r = 0; r < R; ++r) {
                double na2 = 0.0;
                for (std::int64_t d = 0; d < D; ++d) {
                    double v = an->data[r * D + d];
                    na2 += v * v;
                }
                double na = std::sqrt(na2);
                for (std::int64_t c = 0; c < C; ++c) {
                    double g = self.grad[r * C + c];
                    if (g == 0.0) continue;
                    double dot = 0.0;
                    for (std::int64_t d = 0; d < D; ++d)
                        dot += an->data[r * D + d] * mn->data[c * D + d];
                    double nb = mnorm[c];
                    double den = na * nb + kCosineEps;
                    if (an->requires_grad)
                        for (std::int64_t d = 0; d < D; ++d) {
                            double t = mn->data[c * D + d] / den;
                            if (na > kNormEps)
                                t -= dot * nb * an->data[r * D + d] / (na * den * den);
                            an->grad[r * D + d] += g * t;
                        }
                    if (mn->requires_grad)
                        for (std::int64_t d = 0; d < D; ++d) {
                            double t = an->data[r * D + d] / den;
                            if (nb > kNormEps)
                                t -= dot * na * mn->data[c * D + d] / (nb * den * den);
                            mn->grad[c * D + d] += g * t;
                        }
                }
            }
        });
    auto& o = out.data();
    std::vector<double> mnorm(C);
    for (std::int64_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double v = mn->data[c * D + d];
            acc += v * v;
        }
        mnorm[c] = std::sqrt(acc);
    }
    for (std::int64_t r = 0; r < R; ++r) {
        double na2 = 0.0;
        for (std::int64_t d = 0; d < D; ++d) {
            double v = an->data[r * D + d];
            na2 += v * v;
        }
        double na = std::sqrt(na2);
        for (std::int64_t c = 0; c < C; ++c) {
            double dot = 0.0;
            for (std::int64_t d = 0; d < D; ++d)
                dot += an->data[r * D + d] * mn->data[c * D + d];
            o[r * C + c] = dot / (na * mnorm[c] + kCosineEps);
        }
    }
    detail::check_finite(*out.node(), "cosine_pairwise");
    return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& root) {
    if (root.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    auto rn = root.node();

    // reverse topological order via iterative DFS
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame { Node* n; std::size_t next; };
    std::vector<Frame> stack;
    if (rn->requires_grad) {
        stack.push_back({rn.get(), 0});
        visited.insert(rn.get());
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        n->ensure_grad();
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    rn->ensure_grad();
    rn->grad[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

} // namespace scdl

#endif
