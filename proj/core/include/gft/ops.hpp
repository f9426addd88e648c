#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "gft/rng.hpp"
#include "gft/tensor.hpp"

namespace gft {
namespace detail {

inline Shape pad_shape(const Shape& s, std::size_t rank) {
    Shape p(rank, 1);
    std::copy(s.begin(), s.end(), p.begin() + (rank - s.size()));
    return p;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    std::size_t rank = std::max(a.size(), b.size());
    Shape pa = pad_shape(a, rank), pb = pad_shape(b, rank), out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1)
            out[i] = pa[i];
        else if (pa[i] == 1)
            out[i] = pb[i];
        else
            throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    return out;
}

// Strides of `in` viewed through broadcasting as `out` (0 on broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    Shape p = pad_shape(in, out.size());
    auto st = strides_of(p);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (p[i] == 1 && out[i] != 1) st[i] = 0;
    return st;
}

// Visits every output element of a broadcast binary op: f(out_i, a_i, b_i).
template <typename F>
inline void for_each_bcast2(const Shape& out, const std::vector<std::size_t>& sa,
                            const std::vector<std::size_t>& sb, F&& f) {
    std::size_t rank = out.size();
    std::size_t total = numel(out);
    if (rank == 0) {
        f(std::size_t(0), std::size_t(0), std::size_t(0));
        return;
    }
    std::size_t last = out[rank - 1];
    std::size_t la = sa[rank - 1], lb = sb[rank - 1];
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oi = 0;
    for (std::size_t row = 0; row < total / last; ++row) {
        std::size_t a0 = 0, b0 = 0;
        for (std::size_t d = 0; d + 1 < rank; ++d) {
            a0 += idx[d] * sa[d];
            b0 += idx[d] * sb[d];
        }
        for (std::size_t j = 0; j < last; ++j) f(oi + j, a0 + j * la, b0 + j * lb);
        oi += last;
        for (std::size_t d = rank - 1; d-- > 0;) {
            if (++idx[d] < out[d]) break;
            idx[d] = 0;
        }
    }
}

// C[m,n] += A[m,k] B[k,n]
template <typename Real>
inline void gemm_nn_acc(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        Real* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            Real av = arow[p];
            const Real* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] B[k,n]^T
template <typename Real>
inline void gemm_nt_acc(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t n,
                        std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * n;
        Real* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const Real* brow = b + p * n;
            Real acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T B[m,n]
template <typename Real>
inline void gemm_tn_acc(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k,
                        std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* arow = a + i * k;
        const Real* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            Real av = arow[p];
            Real* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename Real>
inline std::size_t normalize_axis(const Tensor<Real>& t, long axis) {
    long r = static_cast<long>(t.rank());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(t.shape()));
    return static_cast<std::size_t>(axis);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops (numpy-style trailing-axis broadcasting)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    std::vector<Real> v(numel(os));
    const Real* ap = a.data();
    const Real* bp = b.data();
    detail::for_each_bcast2(os, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) { v[o] = ap[ai] + bp[bi]; });
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<Real>*on = out.get(), *an = a.node().get(), *bn = b.node().get();
        out->backprop = [on, an, bn, sa, sb]() {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            detail::for_each_bcast2(on->shape, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) {
                if (an->requires_grad) an->grad[ai] += on->grad[o];
                if (bn->requires_grad) bn->grad[bi] += on->grad[o];
            });
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    std::vector<Real> v(numel(os));
    const Real* ap = a.data();
    const Real* bp = b.data();
    detail::for_each_bcast2(os, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) { v[o] = ap[ai] - bp[bi]; });
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<Real>*on = out.get(), *an = a.node().get(), *bn = b.node().get();
        out->backprop = [on, an, bn, sa, sb]() {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            detail::for_each_bcast2(on->shape, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) {
                if (an->requires_grad) an->grad[ai] += on->grad[o];
                if (bn->requires_grad) bn->grad[bi] -= on->grad[o];
            });
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    std::vector<Real> v(numel(os));
    const Real* ap = a.data();
    const Real* bp = b.data();
    detail::for_each_bcast2(os, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) { v[o] = ap[ai] * bp[bi]; });
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<Real>*on = out.get(), *an = a.node().get(), *bn = b.node().get();
        out->backprop = [on, an, bn, sa, sb]() {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            detail::for_each_bcast2(on->shape, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) {
                if (an->requires_grad) an->grad[ai] += on->grad[o] * bn->value[bi];
                if (bn->requires_grad) bn->grad[bi] += on->grad[o] * an->value[ai];
            });
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> div(const Tensor<Real>& a, const Tensor<Real>& b) {
    Shape os = detail::broadcast_shape(a.shape(), b.shape());
    auto sa = detail::broadcast_strides(a.shape(), os);
    auto sb = detail::broadcast_strides(b.shape(), os);
    std::vector<Real> v(numel(os));
    const Real* ap = a.data();
    const Real* bp = b.data();
    detail::for_each_bcast2(os, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) { v[o] = ap[ai] / bp[bi]; });
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<Real>*on = out.get(), *an = a.node().get(), *bn = b.node().get();
        out->backprop = [on, an, bn, sa, sb]() {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            detail::for_each_bcast2(on->shape, sa, sb, [&](std::size_t o, std::size_t ai, std::size_t bi) {
                Real bv = bn->value[bi];
                if (an->requires_grad) an->grad[ai] += on->grad[o] / bv;
                if (bn->requires_grad) bn->grad[bi] -= on->grad[o] * an->value[ai] / (bv * bv);
            });
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real c) {
    std::vector<Real> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * x.data()[i];
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn, c]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += c * on->grad[i];
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& x) {
    return scale(x, Real(-1));
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
    std::vector<Real> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] > Real(0) ? x.data()[i] : Real(0);
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                if (xn->value[i] > Real(0)) xn->grad[i] += on->grad[i];
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
    std::vector<Real> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        Real xv = x.data()[i];
        if (xv >= Real(0)) {
            v[i] = Real(1) / (Real(1) + std::exp(-xv));
        } else {
            Real e = std::exp(xv);
            v[i] = e / (Real(1) + e);
        }
    }
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                Real y = on->value[i];
                xn->grad[i] += on->grad[i] * y * (Real(1) - y);
            }
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
    std::vector<Real> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(x.data()[i]);
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                Real y = on->value[i];
                xn->grad[i] += on->grad[i] * (Real(1) - y * y);
            }
        };
    }
    return Tensor<Real>(out);
}

// Inverted dropout. In eval mode this returns the input tensor itself, so
// the identity is exact down to the node.
template <typename Real>
Tensor<Real> dropout(const Tensor<Real>& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    Real inv = Real(1.0 / (1.0 - rate));
    std::vector<Real> factor(x.size());
    for (std::size_t i = 0; i < factor.size(); ++i) factor[i] = rng.uniform() < rate ? Real(0) : inv;
    std::vector<Real> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * factor[i];
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn, factor = std::move(factor)]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * factor[i];
        };
    }
    return Tensor<Real>(out);
}

// ---------------------------------------------------------------------------
// matmul (leading batch dims broadcast)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw DimensionError("matmul requires rank >= 2, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    std::size_t m = a.shape()[a.rank() - 2], k = a.shape()[a.rank() - 1];
    std::size_t k2 = b.shape()[b.rank() - 2], n = b.shape()[b.rank() - 1];
    if (k != k2)
        throw DimensionError("matmul inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    Shape obatch = detail::broadcast_shape(abatch, bbatch);
    auto sa = detail::broadcast_strides(abatch, obatch);
    auto sb = detail::broadcast_strides(bbatch, obatch);
    Shape os = obatch;
    os.push_back(m);
    os.push_back(n);
    std::vector<Real> v(numel(os), Real(0));
    const Real* ap = a.data();
    const Real* bp = b.data();
    std::size_t nb = numel(obatch);
    {
        std::vector<std::size_t> idx(obatch.size(), 0);
        for (std::size_t blk = 0; blk < nb; ++blk) {
            std::size_t ai = 0, bi = 0;
            for (std::size_t d = 0; d < obatch.size(); ++d) {
                ai += idx[d] * sa[d];
                bi += idx[d] * sb[d];
            }
            detail::gemm_nn_acc(ap + ai * m * k, bp + bi * k * n, v.data() + blk * m * n, m, k, n);
            for (std::size_t d = obatch.size(); d-- > 0;) {
                if (++idx[d] < obatch[d]) break;
                idx[d] = 0;
            }
        }
    }
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && (a.requires_grad() || b.requires_grad())) {
        out->requires_grad = true;
        out->parents = {a.node(), b.node()};
        Node<Real>*on = out.get(), *an = a.node().get(), *bn = b.node().get();
        out->backprop = [on, an, bn, obatch, sa, sb, m, k, n]() {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            std::size_t nb = numel(obatch);
            std::vector<std::size_t> idx(obatch.size(), 0);
            for (std::size_t blk = 0; blk < nb; ++blk) {
                std::size_t ai = 0, bi = 0;
                for (std::size_t d = 0; d < obatch.size(); ++d) {
                    ai += idx[d] * sa[d];
                    bi += idx[d] * sb[d];
                }
                const Real* g = on->grad.data() + blk * m * n;
                if (an->requires_grad)
                    detail::gemm_nt_acc(g, bn->value.data() + bi * k * n, an->grad.data() + ai * m * k, m, n, k);
                if (bn->requires_grad)
                    detail::gemm_tn_acc(an->value.data() + ai * m * k, g, bn->grad.data() + bi * k * n, m, k, n);
                for (std::size_t d = obatch.size(); d-- > 0;) {
                    if (++idx[d] < obatch[d]) break;
                    idx[d] = 0;
                }
            }
        };
    }
    return Tensor<Real>(out);
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, long axis) {
    std::size_t ax = detail::normalize_axis(x, axis);
    std::size_t K = x.shape()[ax];
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
    for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    std::vector<Real> v(x.size());
    const Real* xp = x.data();
    for (std::size_t ou = 0; ou < outer; ++ou) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = ou * K * inner + in;
            Real mx = xp[base];
            for (std::size_t j = 1; j < K; ++j) mx = std::max(mx, xp[base + j * inner]);
            Real sum = 0;
            for (std::size_t j = 0; j < K; ++j) {
                Real e = std::exp(xp[base + j * inner] - mx);
                v[base + j * inner] = e;
                sum += e;
            }
            Real isum = Real(1) / sum;
            for (std::size_t j = 0; j < K; ++j) v[base + j * inner] *= isum;
        }
    }
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn, K, outer, inner]() {
            xn->ensure_grad();
            for (std::size_t ou = 0; ou < outer; ++ou) {
                for (std::size_t in = 0; in < inner; ++in) {
                    std::size_t base = ou * K * inner + in;
                    Real dot = 0;
                    for (std::size_t j = 0; j < K; ++j)
                        dot += on->value[base + j * inner] * on->grad[base + j * inner];
                    for (std::size_t j = 0; j < K; ++j) {
                        std::size_t p = base + j * inner;
                        xn->grad[p] += on->value[p] * (on->grad[p] - dot);
                    }
                }
            }
        };
    }
    return Tensor<Real>(out);
}

// Normalizes over the last axis; gamma/beta have that axis's extent.
template <typename Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        double eps = 1e-6) {
    if (eps <= 0) throw ConfigError("layer_norm eps must be positive");
    std::size_t D = x.shape()[x.rank() - 1];
    if (gamma.size() != D || beta.size() != D)
        throw DimensionError("layer_norm affine size mismatch: x " + shape_str(x.shape()) + ", gamma " +
                             shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
    std::size_t rows = x.size() / D;
    std::vector<Real> v(x.size());
    std::vector<Real> mean(rows), istd(rows);
    const Real* xp = x.data();
    const Real* gp = gamma.data();
    const Real* bp = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = xp + r * D;
        Real mu = 0;
        for (std::size_t j = 0; j < D; ++j) mu += row[j];
        mu /= Real(D);
        Real var = 0;
        for (std::size_t j = 0; j < D; ++j) {
            Real d = row[j] - mu;
            var += d * d;
        }
        var /= Real(D);
        Real inv = Real(1) / std::sqrt(var + Real(eps));
        mean[r] = mu;
        istd[r] = inv;
        Real* orow = v.data() + r * D;
        for (std::size_t j = 0; j < D; ++j) orow[j] = gp[j] * ((row[j] - mu) * inv) + bp[j];
    }
    auto out = std::make_shared<Node<Real>>(x.shape(), std::move(v));
    if (grad_enabled() && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out->requires_grad = true;
        out->parents = {x.node(), gamma.node(), beta.node()};
        Node<Real>*on = out.get(), *xn = x.node().get(), *gn = gamma.node().get(), *bn = beta.node().get();
        out->backprop = [on, xn, gn, bn, D, rows, mean = std::move(mean), istd = std::move(istd)]() {
            if (xn->requires_grad) xn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* row = xn->value.data() + r * D;
                const Real* g = on->grad.data() + r * D;
                Real mu = mean[r], inv = istd[r];
                if (gn->requires_grad || bn->requires_grad) {
                    for (std::size_t j = 0; j < D; ++j) {
                        Real xh = (row[j] - mu) * inv;
                        if (gn->requires_grad) gn->grad[j] += g[j] * xh;
                        if (bn->requires_grad) bn->grad[j] += g[j];
                    }
                }
                if (!xn->requires_grad) continue;
                Real sum_dxh = 0, sum_dxh_xc = 0;
                for (std::size_t j = 0; j < D; ++j) {
                    Real dxh = g[j] * gn->value[j];
                    sum_dxh += dxh;
                    sum_dxh_xc += dxh * (row[j] - mu);
                }
                Real inv3 = inv * inv * inv;
                for (std::size_t j = 0; j < D; ++j) {
                    Real dxh = g[j] * gn->value[j];
                    Real xc = row[j] - mu;
                    xn->grad[r * D + j] +=
                        dxh * inv - (sum_dxh * inv + sum_dxh_xc * inv3 * xc) / Real(D);
                }
            }
        };
    }
    return Tensor<Real>(out);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape ns) {
    if (numel(ns) != x.size())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(ns) +
                             " changes element count");
    auto out = std::make_shared<Node<Real>>(std::move(ns), x.values());
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x, const std::vector<std::size_t>& perm) {
    if (perm.size() != x.rank()) throw DimensionError("transpose perm rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    Shape os(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) {
        if (perm[d] >= perm.size() || seen[perm[d]]) throw DimensionError("transpose perm is not a permutation");
        seen[perm[d]] = true;
        os[d] = x.shape()[perm[d]];
    }
    auto xstr = strides_of(x.shape());
    std::vector<std::size_t> src_stride(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d) src_stride[d] = xstr[perm[d]];
    std::vector<Real> v(x.size());
    const Real* xp = x.data();
    std::vector<std::size_t> idx(os.size(), 0);
    for (std::size_t o = 0; o < v.size(); ++o) {
        std::size_t si = 0;
        for (std::size_t d = 0; d < os.size(); ++d) si += idx[d] * src_stride[d];
        v[o] = xp[si];
        for (std::size_t d = os.size(); d-- > 0;) {
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
        }
    }
    auto out = std::make_shared<Node<Real>>(os, std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn, os, src_stride]() {
            xn->ensure_grad();
            std::vector<std::size_t> idx(os.size(), 0);
            for (std::size_t o = 0; o < on->grad.size(); ++o) {
                std::size_t si = 0;
                for (std::size_t d = 0; d < os.size(); ++d) si += idx[d] * src_stride[d];
                xn->grad[si] += on->grad[o];
                for (std::size_t d = os.size(); d-- > 0;) {
                    if (++idx[d] < os[d]) break;
                    idx[d] = 0;
                }
            }
        };
    }
    return Tensor<Real>(out);
}

// Swap the last two axes.
template <typename Real>
Tensor<Real> transpose_last2(const Tensor<Real>& x) {
    if (x.rank() < 2) throw DimensionError("transpose_last2 requires rank >= 2");
    std::vector<std::size_t> perm(x.rank());
    for (std::size_t d = 0; d < x.rank(); ++d) perm[d] = d;
    std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
    return transpose(x, perm);
}

template <typename Real>
Tensor<Real> narrow(const Tensor<Real>& x, long axis, std::size_t start, std::size_t len) {
    std::size_t ax = detail::normalize_axis(x, axis);
    if (start + len > x.shape()[ax])
        throw DimensionError("narrow [" + std::to_string(start) + "," + std::to_string(start + len) +
                             ") out of range for " + shape_str(x.shape()));
    Shape os = x.shape();
    os[ax] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
    for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    std::size_t K = x.shape()[ax];
    std::vector<Real> v(numel(os));
    for (std::size_t ou = 0; ou < outer; ++ou)
        std::memcpy(v.data() + ou * len * inner, x.data() + (ou * K + start) * inner,
                    len * inner * sizeof(Real));
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn, outer, inner, K, start, len]() {
            xn->ensure_grad();
            for (std::size_t ou = 0; ou < outer; ++ou) {
                const Real* g = on->grad.data() + ou * len * inner;
                Real* dst = xn->grad.data() + (ou * K + start) * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
            }
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, long axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    std::size_t ax = detail::normalize_axis(parts[0], axis);
    Shape os = parts[0].shape();
    std::size_t total_ax = 0;
    for (const auto& p : parts) {
        if (p.rank() != os.size()) throw DimensionError("concat rank mismatch");
        for (std::size_t d = 0; d < os.size(); ++d)
            if (d != ax && p.shape()[d] != os[d])
                throw DimensionError("concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(os));
        total_ax += p.shape()[ax];
    }
    os[ax] = total_ax;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < ax; ++d) outer *= os[d];
    for (std::size_t d = ax + 1; d < os.size(); ++d) inner *= os[d];
    std::vector<Real> v(numel(os));
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::size_t K = p.shape()[ax];
        for (std::size_t ou = 0; ou < outer; ++ou)
            std::memcpy(v.data() + (ou * total_ax + off) * inner, p.data() + ou * K * inner,
                        K * inner * sizeof(Real));
        off += K;
    }
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    bool rec = grad_enabled();
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (rec && any) {
        out->requires_grad = true;
        std::vector<std::size_t> extents;
        for (const auto& p : parts) {
            out->parents.push_back(p.node());
            extents.push_back(p.shape()[ax]);
        }
        Node<Real>* on = out.get();
        out->backprop = [on, outer, inner, total_ax, extents]() {
            std::size_t off = 0;
            for (std::size_t pi = 0; pi < extents.size(); ++pi) {
                Node<Real>* pn = on->parents[pi].get();
                std::size_t K = extents[pi];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (std::size_t ou = 0; ou < outer; ++ou) {
                        const Real* g = on->grad.data() + (ou * total_ax + off) * inner;
                        Real* dst = pn->grad.data() + ou * K * inner;
                        for (std::size_t i = 0; i < K * inner; ++i) dst[i] += g[i];
                    }
                }
                off += K;
            }
        };
    }
    return Tensor<Real>(out);
}

// Sum over one axis, keeping it with extent 1.
template <typename Real>
Tensor<Real> sum_axis(const Tensor<Real>& x, long axis) {
    std::size_t ax = detail::normalize_axis(x, axis);
    std::size_t K = x.shape()[ax];
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
    for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    Shape os = x.shape();
    os[ax] = 1;
    std::vector<Real> v(outer * inner, Real(0));
    const Real* xp = x.data();
    for (std::size_t ou = 0; ou < outer; ++ou)
        for (std::size_t j = 0; j < K; ++j) {
            const Real* src = xp + (ou * K + j) * inner;
            Real* dst = v.data() + ou * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn, outer, inner, K]() {
            xn->ensure_grad();
            for (std::size_t ou = 0; ou < outer; ++ou)
                for (std::size_t j = 0; j < K; ++j) {
                    const Real* g = on->grad.data() + ou * inner;
                    Real* dst = xn->grad.data() + (ou * K + j) * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
    Real s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
    auto out = std::make_shared<Node<Real>>(Shape{1}, std::vector<Real>{s});
    if (grad_enabled() && x.requires_grad()) {
        out->requires_grad = true;
        out->parents = {x.node()};
        Node<Real>*on = out.get(), *xn = x.node().get();
        out->backprop = [on, xn]() {
            xn->ensure_grad();
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[0];
        };
    }
    return Tensor<Real>(out);
}

// ---------------------------------------------------------------------------
// gather / recurrence / loss
// ---------------------------------------------------------------------------

// Row gather; gradients scatter-add into the table.
template <typename Real>
Tensor<Real> embedding_lookup(const Tensor<Real>& table, const std::vector<long>& ids, Shape id_shape) {
    if (table.rank() != 2) throw DimensionError("embedding table must be rank 2, got " + shape_str(table.shape()));
    if (numel(id_shape) != ids.size())
        throw DimensionError("id count does not match id shape " + shape_str(id_shape));
    std::size_t V = table.shape()[0], E = table.shape()[1];
    for (long id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= V)
            throw IndexError("embedding id " + std::to_string(id) + " out of range [0," + std::to_string(V) + ")");
    Shape os = id_shape;
    os.push_back(E);
    std::vector<Real> v(ids.size() * E);
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::memcpy(v.data() + i * E, table.data() + static_cast<std::size_t>(ids[i]) * E, E * sizeof(Real));
    auto out = std::make_shared<Node<Real>>(std::move(os), std::move(v));
    if (grad_enabled() && table.requires_grad()) {
        out->requires_grad = true;
        out->parents = {table.node()};
        Node<Real>*on = out.get(), *tn = table.node().get();
        out->backprop = [on, tn, ids, E]() {
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const Real* g = on->grad.data() + i * E;
                Real* dst = tn->grad.data() + static_cast<std::size_t>(ids[i]) * E;
                for (std::size_t j = 0; j < E; ++j) dst[j] += g[j];
            }
        };
    }
    return Tensor<Real>(out);
}

template <typename Real>
struct LstmWeights {
    Tensor<Real> wx;  // [input, 4*hidden], gate order i,f,g,o
    Tensor<Real> wh;  // [hidden, 4*hidden]
    Tensor<Real> b;   // [4*hidden]
};

// One step of the standard LSTM recurrence.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> lstm_step(const Tensor<Real>& x, const Tensor<Real>& h_prev,
                                                const Tensor<Real>& c_prev, const LstmWeights<Real>& w) {
    if (x.rank() != 2 || h_prev.rank() != 2 || c_prev.rank() != 2)
        throw DimensionError("lstm_step expects [batch, dim] inputs");
    std::size_t H = h_prev.shape()[1];
    if (w.wx.shape()[1] != 4 * H || w.wh.shape()[0] != H || w.wh.shape()[1] != 4 * H ||
        w.b.size() != 4 * H || w.wx.shape()[0] != x.shape()[1] || c_prev.shape()[1] != H)
        throw DimensionError("lstm_step weight shapes inconsistent with inputs");
    Tensor<Real> gates = add(add(matmul(x, w.wx), matmul(h_prev, w.wh)), w.b);
    Tensor<Real> i = sigmoid(narrow(gates, -1, 0, H));
    Tensor<Real> f = sigmoid(narrow(gates, -1, H, H));
    Tensor<Real> g = tanh(narrow(gates, -1, 2 * H, H));
    Tensor<Real> o = sigmoid(narrow(gates, -1, 3 * H, H));
    Tensor<Real> c = add(mul(f, c_prev), mul(i, g));
    Tensor<Real> h = mul(o, tanh(c));
    return {h, c};
}

// Mean over the batch of the summed per-class binary cross-entropy.
// Probabilities are clamped to [1e-7, 1-1e-7]; non-finite inputs raise.
template <typename Real>
Tensor<Real> bce_loss(const Tensor<Real>& probs, const Tensor<Real>& target) {
    if (probs.shape() != target.shape())
        throw DimensionError("bce_loss shape mismatch: " + shape_str(probs.shape()) + " vs " +
                             shape_str(target.shape()));
    if (probs.rank() < 1) throw DimensionError("bce_loss requires at least rank 1");
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (!std::isfinite(static_cast<double>(probs.data()[i])))
            throw NumericError("bce_loss: non-finite probability at flat index " + std::to_string(i));
    const Real lo = Real(1e-7), hi = Real(1) - Real(1e-7);
    std::size_t B = probs.shape()[0];
    double acc = 0;
    const Real* pp = probs.data();
    const Real* tp = target.data();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        Real p = std::min(std::max(pp[i], lo), hi);
        acc -= static_cast<double>(tp[i]) * std::log(static_cast<double>(p)) +
               (1.0 - static_cast<double>(tp[i])) * std::log(1.0 - static_cast<double>(p));
    }
    Real lv = static_cast<Real>(acc / static_cast<double>(B));
    if (!std::isfinite(static_cast<double>(lv))) throw NumericError("bce_loss: non-finite loss value");
    auto out = std::make_shared<Node<Real>>(Shape{1}, std::vector<Real>{lv});
    if (grad_enabled() && (probs.requires_grad() || target.requires_grad())) {
        out->requires_grad = true;
        out->parents = {probs.node(), target.node()};
        Node<Real>*on = out.get(), *pn = probs.node().get(), *tn = target.node().get();
        out->backprop = [on, pn, tn, B, lo, hi]() {
            Real gs = on->grad[0] / Real(B);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (std::size_t i = 0; i < pn->value.size(); ++i) {
                    Real p = pn->value[i];
                    if (p <= lo || p >= hi) continue;  // clamped region: flat
                    Real t = tn->value[i];
                    pn->grad[i] += gs * (-t / p + (Real(1) - t) / (Real(1) - p));
                }
            }
            if (tn->requires_grad) {
                tn->ensure_grad();
                for (std::size_t i = 0; i < tn->value.size(); ++i) {
                    Real p = std::min(std::max(pn->value[i], lo), hi);
                    tn->grad[i] += gs * (std::log(Real(1) - p) - std::log(p));
                }
            }
        };
    }
    return Tensor<Real>(out);
}

// ---------------------------------------------------------------------------
// conv2d (direct form, NCHW)
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& bias,
                    std::size_t stride, std::size_t pad) {
    if (x.rank() != 4 || w.rank() != 4)
        throw DimensionError("conv2d expects x [B,C,H,W] and w [O,C,kh,kw], got " + shape_str(x.shape()) +
                             " and " + shape_str(w.shape()));
    if (stride == 0) throw ConfigError("conv2d stride must be positive");
    std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    std::size_t O = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != C) throw DimensionError("conv2d channel mismatch");
    if (bias.size() != O) throw DimensionError("conv2d bias size mismatch");
    if (H + 2 * pad < kh || W + 2 * pad < kw) throw DimensionError("conv2d kernel larger than padded input");
    std::size_t Ho = (H + 2 * pad - kh) / stride + 1;
    std::size_t Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<Real> v(B * O * Ho * Wo);
    const Real* xp = x.data();
    const Real* wp = w.data();
    const Real* bp = bias.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t oy = 0; oy < Ho; ++oy)
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    Real acc = bp[o];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ky = 0; ky < kh; ++ky) {
                            long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            for (std::size_t kx = 0; kx < kw; ++kx) {
                                long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                acc += xp[((b * C + c) * H + iy) * W + ix] *
                                       wp[((o * C + c) * kh + ky) * kw + kx];
                            }
                        }
                    v[((b * O + o) * Ho + oy) * Wo + ox] = acc;
                }
    auto out = std::make_shared<Node<Real>>(Shape{B, O, Ho, Wo}, std::move(v));
    if (grad_enabled() && (x.requires_grad() || w.requires_grad() || bias.requires_grad())) {
        out->requires_grad = true;
        out->parents = {x.node(), w.node(), bias.node()};
        Node<Real>*on = out.get(), *xn = x.node().get(), *wn = w.node().get(), *bn = bias.node().get();
        out->backprop = [on, xn, wn, bn, B, C, H, W, O, kh, kw, Ho, Wo, stride, pad]() {
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t oy = 0; oy < Ho; ++oy)
                        for (std::size_t ox = 0; ox < Wo; ++ox) {
                            Real g = on->grad[((b * O + o) * Ho + oy) * Wo + ox];
                            if (bn->requires_grad) bn->grad[o] += g;
                            for (std::size_t c = 0; c < C; ++c)
                                for (std::size_t ky = 0; ky < kh; ++ky) {
                                    long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                                    for (std::size_t kx = 0; kx < kw; ++kx) {
                                        long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                        if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                        std::size_t xi = ((b * C + c) * H + iy) * W + ix;
                                        std::size_t wi = ((o * C + c) * kh + ky) * kw + kx;
                                        if (xn->requires_grad) xn->grad[xi] += g * wn->value[wi];
                                        if (wn->requires_grad) wn->grad[wi] += g * xn->value[xi];
                                    }
                                }
                        }
        };
    }
    return Tensor<Real>(out);
}

// operator sugar
template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <typename Real>
Tensor<Real> operator/(const Tensor<Real>& a, const Tensor<Real>& b) { return div(a, b); }

}  // namespace gft
