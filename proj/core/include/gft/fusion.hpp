#pragma once

#include "gft/attention.hpp"
#include "gft/ops.hpp"

namespace gft {

// Two-layer scoring MLP (linear -> ReLU -> dropout -> linear -> scalar logit
// per position) used to collapse an attended feature set to one vector.
template <typename Real>
struct ReduceParams {
    LinearParams<Real> l1;  // d_model -> d_model
    LinearParams<Real> l2;  // d_model -> 1

    static ReduceParams init(std::size_t d_model, Rng& rng) {
        ReduceParams p;
        p.l1 = LinearParams<Real>::init(d_model, d_model, rng);
        p.l2 = LinearParams<Real>::init(d_model, 1, rng);
        return p;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        register_linear(ps, prefix + ".l1", l1);
        register_linear(ps, prefix + ".l2", l2);
    }
};

// Softmax over positions of the per-position logits, then the weighted sum of
// rows. Accepts [n, d] or [B, n, d]; returns [d] or [B, d].
template <typename Real>
Tensor<Real> attentional_reduce(const Tensor<Real>& z, const ReduceParams<Real>& p, double dropout_rate,
                                bool training, Rng& rng) {
    bool was_2d = false;
    Tensor<Real> zb = detail::to_batched(z, was_2d);
    std::size_t b = zb.shape()[0], n = zb.shape()[1], d = zb.shape()[2];
    if (n == 0) throw ContractError("attentional_reduce over zero positions");
    Tensor<Real> logits = p.l2(dropout(relu(p.l1(zb)), dropout_rate, training, rng));  // [B, n, 1]
    Tensor<Real> weights = softmax(reshape(logits, {b, std::size_t(1), n}), -1);
    Tensor<Real> pooled = reshape(matmul(weights, zb), {b, d});
    if (was_2d) pooled = reshape(pooled, {d});
    return pooled;
}

// Mutual fusion: a three-layer MLP (no nonlinearity, dropout after each
// layer) of Xp + Yp emits two gate rows; a per-dimension softmax across the
// rows weights the two modalities before the projection + layer norm.
template <typename Real>
struct MutualFusionParams {
    LinearParams<Real> m1, m2;  // d_model -> d_model
    LinearParams<Real> m3;      // d_model -> 2*d_model
    LinearParams<Real> w1, w2;  // d_model -> d_model
    Tensor<Real> ln_gamma, ln_beta;

    static MutualFusionParams init(std::size_t d_model, Rng& rng) {
        MutualFusionParams p;
        p.m1 = LinearParams<Real>::init(d_model, d_model, rng);
        p.m2 = LinearParams<Real>::init(d_model, d_model, rng);
        p.m3 = LinearParams<Real>::init(d_model, 2 * d_model, rng);
        p.w1 = LinearParams<Real>::init(d_model, d_model, rng);
        p.w2 = LinearParams<Real>::init(d_model, d_model, rng);
        p.ln_gamma = Tensor<Real>::full({d_model}, Real(1));
        p.ln_beta = Tensor<Real>::zeros({d_model});
        return p;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        register_linear(ps, prefix + ".m1", m1);
        register_linear(ps, prefix + ".m2", m2);
        register_linear(ps, prefix + ".m3", m3);
        register_linear(ps, prefix + ".w1", w1);
        register_linear(ps, prefix + ".w2", w2);
        ps.add(prefix + ".ln.gamma", ln_gamma);
        ps.add(prefix + ".ln.beta", ln_beta);
    }
};

template <typename Real>
struct MutualFusionOut {
    Tensor<Real> fused;   // [B, d]
    Tensor<Real> gate_x;  // [B, d], elementwise weight on Xp
    Tensor<Real> gate_y;  // [B, d], gate_x + gate_y == 1
};

template <typename Real>
MutualFusionOut<Real> mutual_fusion_detailed(const Tensor<Real>& xp, const Tensor<Real>& yp,
                                             const MutualFusionParams<Real>& p, double dropout_rate,
                                             bool training, Rng& rng) {
    if (xp.shape() != yp.shape())
        throw DimensionError("mutual_fusion inputs differ: " + shape_str(xp.shape()) + " vs " +
                             shape_str(yp.shape()));
    bool was_1d = xp.rank() == 1;
    Tensor<Real> x = was_1d ? reshape(xp, {std::size_t(1), xp.shape()[0]}) : xp;
    Tensor<Real> y = was_1d ? reshape(yp, {std::size_t(1), yp.shape()[0]}) : yp;
    std::size_t b = x.shape()[0], d = x.shape()[1];
    Tensor<Real> s = add(x, y);
    Tensor<Real> h = dropout(p.m1(s), dropout_rate, training, rng);
    h = dropout(p.m2(h), dropout_rate, training, rng);
    h = dropout(p.m3(h), dropout_rate, training, rng);  // [B, 2d]
    Tensor<Real> gates = softmax(reshape(h, {b, std::size_t(2), d}), 1);
    Tensor<Real> wx = reshape(narrow(gates, 1, 0, 1), {b, d});
    Tensor<Real> wy = reshape(narrow(gates, 1, 1, 1), {b, d});
    Tensor<Real> fused =
        layer_norm(add(p.w1(mul(wx, x)), p.w2(mul(wy, y))), p.ln_gamma, p.ln_beta);
    MutualFusionOut<Real> out;
    out.fused = was_1d ? reshape(fused, {d}) : fused;
    out.gate_x = wx;
    out.gate_y = wy;
    return out;
}

template <typename Real>
Tensor<Real> mutual_fusion(const Tensor<Real>& xp, const Tensor<Real>& yp, const MutualFusionParams<Real>& p,
                           double dropout_rate, bool training, Rng& rng) {
    return mutual_fusion_detailed(xp, yp, p, dropout_rate, training, rng).fused;
}

// F = LayerNorm(W1 Xp + W2 Yp).
template <typename Real>
struct BaselineFuseParams {
    LinearParams<Real> w1, w2;
    Tensor<Real> ln_gamma, ln_beta;

    static BaselineFuseParams init(std::size_t d_model, Rng& rng) {
        BaselineFuseParams p;
        p.w1 = LinearParams<Real>::init(d_model, d_model, rng);
        p.w2 = LinearParams<Real>::init(d_model, d_model, rng);
        p.ln_gamma = Tensor<Real>::full({d_model}, Real(1));
        p.ln_beta = Tensor<Real>::zeros({d_model});
        return p;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        register_linear(ps, prefix + ".w1", w1);
        register_linear(ps, prefix + ".w2", w2);
        ps.add(prefix + ".ln.gamma", ln_gamma);
        ps.add(prefix + ".ln.beta", ln_beta);
    }
};

template <typename Real>
Tensor<Real> baseline_fuse(const Tensor<Real>& xp, const Tensor<Real>& yp, const BaselineFuseParams<Real>& p) {
    if (xp.shape() != yp.shape())
        throw DimensionError("baseline_fuse inputs differ: " + shape_str(xp.shape()) + " vs " +
                             shape_str(yp.shape()));
    return layer_norm(add(p.w1(xp), p.w2(yp)), p.ln_gamma, p.ln_beta);
}

template <typename Real>
struct ClassifierParams {
    LinearParams<Real> out;  // d_model -> answer count

    static ClassifierParams init(std::size_t d_model, std::size_t n_answers, Rng& rng) {
        ClassifierParams p;
        p.out = LinearParams<Real>::init(d_model, n_answers, rng);
        return p;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) { register_linear(ps, prefix + ".out", out); }
};

// Elementwise sigmoid over the answer logits.
template <typename Real>
Tensor<Real> classify(const Tensor<Real>& fused, const ClassifierParams<Real>& p) {
    return sigmoid(p.out(fused));
}

// Lowest index wins ties.
template <typename Real>
std::size_t argmax_row(const Real* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

}  // namespace gft
