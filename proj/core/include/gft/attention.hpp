#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gft/ops.hpp"
#include "gft/param_set.hpp"
#include "gft/rng.hpp"

namespace gft {

enum class Assembly { EncoderDecoder, Stacked };

inline std::string to_string(Assembly a) {
    return a == Assembly::EncoderDecoder ? "encoder_decoder" : "stacked";
}

struct MhaConfig {
    std::size_t d_model = 512;
    std::size_t n_heads = 8;
    std::size_t d_head = 64;
    std::size_t ffn_hidden = 0;  // 0 selects 4*d_model
    double dropout_rate = 0.1;
    std::size_t n_layers = 6;
    Assembly assembly = Assembly::EncoderDecoder;
    std::size_t d_pos = 16;
    bool gated = true;

    std::size_t ffn() const { return ffn_hidden ? ffn_hidden : 4 * d_model; }

    void validate() const {
        if (n_heads * d_head != d_model)
            throw ConfigError("n_heads * d_head must equal d_model (" + std::to_string(n_heads) + "*" +
                              std::to_string(d_head) + " != " + std::to_string(d_model) + ")");
        if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
        if (d_pos < 1) throw ConfigError("d_pos must be >= 1");
    }
};

// ---------------------------------------------------------------------------
// relative position tables
// ---------------------------------------------------------------------------

enum class RelPosMode { Grid2d, Seq1d, Cross };

struct GridCoord {
    double row = 0, col = 0;
};

namespace detail {

// Frozen sinusoidal features of a small scalar vector. Channel c encodes
// scalar s[c % S] at frequency pi * 2^(k/2) with k = c / S, alternating
// sin (even k) and cos (odd k).
inline void sinusoid_features(const double* s, std::size_t S, std::size_t dp, double* out) {
    for (std::size_t c = 0; c < dp; ++c) {
        std::size_t k = c / S;
        double omega = 3.14159265358979323846 * std::pow(2.0, static_cast<double>(k / 2));
        double x = omega * s[c % S];
        out[c] = (k % 2 == 0) ? std::sin(x) : std::cos(x);
    }
}

}  // namespace detail

// Fixed (never trained) encodings r of shape [n_query, n_key, d_pos].
// grid2d/seq1d encode normalized offsets, so the table is translation
// consistent; cross concatenates the query's absolute 2-D cell features with
// the key's absolute token-index features.
template <typename Real>
struct RelPosTable {
    RelPosMode mode = RelPosMode::Grid2d;
    std::size_t n_query = 0, n_key = 0, d_pos = 0;
    Tensor<Real> r;  // [n_query, n_key, d_pos], requires_grad == false
};

template <typename Real>
RelPosTable<Real> build_rel_pos_grid2d(const std::vector<GridCoord>& query,
                                       const std::vector<GridCoord>& key, std::size_t dp, double norm) {
    if (query.empty() || key.empty()) throw DimensionError("build_rel_pos: empty position list");
    if (norm <= 0) throw ConfigError("build_rel_pos: norm must be positive");
    std::size_t m = query.size(), n = key.size();
    std::vector<Real> v(m * n * dp);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double dr = (query[i].row - key[j].row) / norm;
            double dc = (query[i].col - key[j].col) / norm;
            double s[3] = {dr, dc, std::hypot(dr, dc)};
            std::vector<double> feat(dp);
            detail::sinusoid_features(s, 3, dp, feat.data());
            for (std::size_t c = 0; c < dp; ++c) v[(i * n + j) * dp + c] = static_cast<Real>(feat[c]);
        }
    RelPosTable<Real> t;
    t.mode = RelPosMode::Grid2d;
    t.n_query = m;
    t.n_key = n;
    t.d_pos = dp;
    t.r = Tensor<Real>::from_data({m, n, dp}, std::move(v));
    return t;
}

template <typename Real>
RelPosTable<Real> build_rel_pos_seq1d(std::size_t n_query, std::size_t n_key, std::size_t dp, double norm) {
    if (n_query == 0 || n_key == 0) throw DimensionError("build_rel_pos: empty position list");
    if (norm <= 0) throw ConfigError("build_rel_pos: norm must be positive");
    std::vector<Real> v(n_query * n_key * dp);
    for (std::size_t i = 0; i < n_query; ++i)
        for (std::size_t j = 0; j < n_key; ++j) {
            double s = (static_cast<double>(i) - static_cast<double>(j)) / norm;
            std::vector<double> feat(dp);
            detail::sinusoid_features(&s, 1, dp, feat.data());
            for (std::size_t c = 0; c < dp; ++c) v[(i * n_key + j) * dp + c] = static_cast<Real>(feat[c]);
        }
    RelPosTable<Real> t;
    t.mode = RelPosMode::Seq1d;
    t.n_query = n_query;
    t.n_key = n_key;
    t.d_pos = dp;
    t.r = Tensor<Real>::from_data({n_query, n_key, dp}, std::move(v));
    return t;
}

template <typename Real>
RelPosTable<Real> build_rel_pos_cross(const std::vector<GridCoord>& query, double query_norm,
                                      std::size_t n_key, double key_norm, std::size_t dp) {
    if (query.empty() || n_key == 0) throw DimensionError("build_rel_pos: empty position list");
    if (query_norm <= 0 || key_norm <= 0) throw ConfigError("build_rel_pos: norm must be positive");
    std::size_t m = query.size();
    std::size_t dq = dp / 2, dk = dp - dq;
    std::vector<Real> v(m * n_key * dp);
    for (std::size_t i = 0; i < m; ++i) {
        double qs[2] = {query[i].row / query_norm, query[i].col / query_norm};
        std::vector<double> qfeat(dq);
        detail::sinusoid_features(qs, 2, dq, qfeat.data());
        for (std::size_t j = 0; j < n_key; ++j) {
            double ks = static_cast<double>(j) / key_norm;
            std::vector<double> kfeat(dk);
            detail::sinusoid_features(&ks, 1, dk, kfeat.data());
            Real* dst = v.data() + (i * n_key + j) * dp;
            for (std::size_t c = 0; c < dq; ++c) dst[c] = static_cast<Real>(qfeat[c]);
            for (std::size_t c = 0; c < dk; ++c) dst[dq + c] = static_cast<Real>(kfeat[c]);
        }
    }
    RelPosTable<Real> t;
    t.mode = RelPosMode::Cross;
    t.n_query = m;
    t.n_key = n_key;
    t.d_pos = dp;
    t.r = Tensor<Real>::from_data({m, n_key, dp}, std::move(v));
    return t;
}

// Row-major cell coordinates of a G x G grid.
inline std::vector<GridCoord> grid_cells(std::size_t g) {
    std::vector<GridCoord> cells;
    cells.reserve(g * g);
    for (std::size_t r = 0; r < g; ++r)
        for (std::size_t c = 0; c < g; ++c)
            cells.push_back({static_cast<double>(r), static_cast<double>(c)});
    return cells;
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

template <typename Real>
struct LinearParams {
    Tensor<Real> w;  // [in, out]
    Tensor<Real> b;  // [out]

    static LinearParams init(std::size_t in, std::size_t out, Rng& rng) {
        LinearParams p;
        double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<Real> wv(in * out);
        for (auto& x : wv) x = static_cast<Real>(rng.uniform(-bound, bound));
        p.w = Tensor<Real>::from_data({in, out}, std::move(wv));
        p.b = Tensor<Real>::zeros({out});
        return p;
    }

    Tensor<Real> operator()(const Tensor<Real>& x) const { return add(matmul(x, w), b); }
};

template <typename Real>
void register_linear(ParamSet<Real>& ps, const std::string& prefix, LinearParams<Real>& lin) {
    ps.add(prefix + ".w", lin.w);
    ps.add(prefix + ".b", lin.b);
}

// Per-head gate theta (init exactly 1) and learnable position embedding P.
template <typename Real>
struct GateParams {
    Tensor<Real> theta;  // [n_heads]
    Tensor<Real> p;      // [n_heads, d_pos]

    static GateParams init(std::size_t n_heads, std::size_t d_pos, Rng& rng) {
        GateParams g;
        g.theta = Tensor<Real>::full({n_heads}, Real(1));
        double bound = 1.0 / std::sqrt(static_cast<double>(d_pos));
        std::vector<Real> pv(n_heads * d_pos);
        for (auto& x : pv) x = static_cast<Real>(rng.uniform(-bound, bound));
        g.p = Tensor<Real>::from_data({n_heads, d_pos}, std::move(pv));
        return g;
    }
};

template <typename Real>
struct AttentionUnitParams {
    LinearParams<Real> wq, wk, wv, wo;
    GateParams<Real> gate;  // present only when gated
    LinearParams<Real> ffn1, ffn2;
    Tensor<Real> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    bool gated = true;

    static AttentionUnitParams init(const MhaConfig& cfg, Rng& rng) {
        AttentionUnitParams u;
        u.wq = LinearParams<Real>::init(cfg.d_model, cfg.d_model, rng);
        u.wk = LinearParams<Real>::init(cfg.d_model, cfg.d_model, rng);
        u.wv = LinearParams<Real>::init(cfg.d_model, cfg.d_model, rng);
        u.wo = LinearParams<Real>::init(cfg.d_model, cfg.d_model, rng);
        u.gated = cfg.gated;
        if (cfg.gated) u.gate = GateParams<Real>::init(cfg.n_heads, cfg.d_pos, rng);
        u.ffn1 = LinearParams<Real>::init(cfg.d_model, cfg.ffn(), rng);
        u.ffn2 = LinearParams<Real>::init(cfg.ffn(), cfg.d_model, rng);
        u.ln1_gamma = Tensor<Real>::full({cfg.d_model}, Real(1));
        u.ln1_beta = Tensor<Real>::zeros({cfg.d_model});
        u.ln2_gamma = Tensor<Real>::full({cfg.d_model}, Real(1));
        u.ln2_beta = Tensor<Real>::zeros({cfg.d_model});
        return u;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        register_linear(ps, prefix + ".wq", wq);
        register_linear(ps, prefix + ".wk", wk);
        register_linear(ps, prefix + ".wv", wv);
        register_linear(ps, prefix + ".wo", wo);
        if (gated) {
            ps.add(prefix + ".gate.theta", gate.theta);
            ps.add(prefix + ".gate.p", gate.p);
        }
        register_linear(ps, prefix + ".ffn1", ffn1);
        register_linear(ps, prefix + ".ffn2", ffn2);
        ps.add(prefix + ".ln1.gamma", ln1_gamma);
        ps.add(prefix + ".ln1.beta", ln1_beta);
        ps.add(prefix + ".ln2.gamma", ln2_gamma);
        ps.add(prefix + ".ln2.beta", ln2_beta);
    }
};

// ---------------------------------------------------------------------------
// attention primitives
// ---------------------------------------------------------------------------

template <typename Real>
struct AttentionOut {
    Tensor<Real> output;
    Tensor<Real> weights;     // final row-stochastic attention
    Tensor<Real> content;     // f_c
    Tensor<Real> positional;  // f_p (undefined for the ungated path)
};

// Softmax(Q K^T / sqrt(d)) V.
template <typename Real>
AttentionOut<Real> scaled_dot_attention(const Tensor<Real>& q, const Tensor<Real>& k,
                                        const Tensor<Real>& v, std::size_t d) {
    if (d == 0) throw ConfigError("scaled_dot_attention: d must be positive");
    Tensor<Real> logits = scale(matmul(q, transpose_last2(k)), Real(1.0 / std::sqrt(static_cast<double>(d))));
    Tensor<Real> w = softmax(logits, -1);
    AttentionOut<Real> out;
    out.output = matmul(w, v);
    out.weights = w;
    out.content = w;
    return out;
}

// Gated positional attention:
//   f_c = Softmax(Q K^T / sqrt(d)),  f_p = Softmax(P^T r) per query row,
//   combined = (1 - sigmoid(theta)) f_c + sigmoid(theta) f_p,
// then L1 row renormalization, then the weighted sum over V.
// theta: [h]; P: [h, d_pos]. For h == 1 the inputs may omit the head axis.
template <typename Real>
AttentionOut<Real> gated_attention(const Tensor<Real>& q, const Tensor<Real>& k, const Tensor<Real>& v,
                                   const RelPosTable<Real>& rel, const Tensor<Real>& theta,
                                   const Tensor<Real>& p, std::size_t d) {
    if (d == 0) throw ConfigError("gated_attention: d must be positive");
    std::size_t m = q.shape()[q.rank() - 2];
    std::size_t n = k.shape()[k.rank() - 2];
    if (rel.n_query != m || rel.n_key != n)
        throw DimensionError("rel table is " + std::to_string(rel.n_query) + "x" + std::to_string(rel.n_key) +
                             " but attention is " + std::to_string(m) + "x" + std::to_string(n));
    if (p.rank() != 2 || p.shape()[1] != rel.d_pos || theta.size() != p.shape()[0])
        throw DimensionError("gate parameter shapes inconsistent with rel table");
    std::size_t h = p.shape()[0];

    Tensor<Real> logits = scale(matmul(q, transpose_last2(k)), Real(1.0 / std::sqrt(static_cast<double>(d))));
    Tensor<Real> f_c = softmax(logits, -1);

    // positional logits: [m*n, d_pos] x [d_pos, h] -> [h, m, n]
    Tensor<Real> rm = reshape(rel.r, {m * n, rel.d_pos});
    Tensor<Real> plog = transpose(matmul(rm, transpose_last2(p)), {1, 0});
    Tensor<Real> f_p = softmax(reshape(plog, {h, m, n}), -1);
    Tensor<Real> gate = reshape(sigmoid(theta), {h, std::size_t(1), std::size_t(1)});
    if (h == 1) {
        f_p = reshape(f_p, {m, n});
        gate = reshape(gate, {std::size_t(1)});
    }
    Tensor<Real> one = Tensor<Real>::full({1}, Real(1));
    Tensor<Real> combined = add(mul(sub(one, gate), f_c), mul(gate, f_p));
    Tensor<Real> row_sums = sum_axis(combined, -1);
    Tensor<Real> weights = div(combined, row_sums);

    AttentionOut<Real> out;
    out.output = matmul(weights, v);
    out.weights = weights;
    out.content = f_c;
    out.positional = f_p;
    return out;
}

// ---------------------------------------------------------------------------
// SA / GA units
// ---------------------------------------------------------------------------

namespace detail {

// [B, n, d_model] -> [B, h, n, d_head]
template <typename Real>
Tensor<Real> split_heads(const Tensor<Real>& x, std::size_t h, std::size_t dh) {
    std::size_t b = x.shape()[0], n = x.shape()[1];
    return transpose(reshape(x, {b, n, h, dh}), {0, 2, 1, 3});
}

template <typename Real>
Tensor<Real> merge_heads(const Tensor<Real>& x) {
    std::size_t b = x.shape()[0], h = x.shape()[1], n = x.shape()[2], dh = x.shape()[3];
    return reshape(transpose(x, {0, 2, 1, 3}), {b, n, h * dh});
}

// Multi-head attention core shared by SA and GA.
template <typename Real>
Tensor<Real> mha(const Tensor<Real>& xq, const Tensor<Real>& ykv, const AttentionUnitParams<Real>& u,
                 const RelPosTable<Real>& rel, const MhaConfig& cfg) {
    Tensor<Real> q = split_heads(u.wq(xq), cfg.n_heads, cfg.d_head);
    Tensor<Real> k = split_heads(u.wk(ykv), cfg.n_heads, cfg.d_head);
    Tensor<Real> v = split_heads(u.wv(ykv), cfg.n_heads, cfg.d_head);
    AttentionOut<Real> att = u.gated ? gated_attention(q, k, v, rel, u.gate.theta, u.gate.p, cfg.d_head)
                                     : scaled_dot_attention(q, k, v, cfg.d_head);
    return u.wo(merge_heads(att.output));
}

template <typename Real>
Tensor<Real> to_batched(const Tensor<Real>& x, bool& was_2d) {
    was_2d = x.rank() == 2;
    if (was_2d) return reshape(x, {std::size_t(1), x.shape()[0], x.shape()[1]});
    if (x.rank() != 3) throw DimensionError("attention unit expects [n, d] or [B, n, d], got " + shape_str(x.shape()));
    return x;
}

}  // namespace detail

// Self-attention unit: gated MHA with Q=K=V=X, residual + layer norm,
// FFN (linear -> ReLU -> dropout -> linear), residual + layer norm.
template <typename Real>
Tensor<Real> sa_unit(const Tensor<Real>& x, const AttentionUnitParams<Real>& u, const RelPosTable<Real>& rel,
                     const MhaConfig& cfg, bool training, Rng& rng) {
    bool was_2d = false;
    Tensor<Real> xb = detail::to_batched(x, was_2d);
    Tensor<Real> att = detail::mha(xb, xb, u, rel, cfg);
    Tensor<Real> t = layer_norm(add(xb, att), u.ln1_gamma, u.ln1_beta);
    Tensor<Real> f = u.ffn2(dropout(relu(u.ffn1(t)), cfg.dropout_rate, training, rng));
    Tensor<Real> out = layer_norm(add(t, f), u.ln2_gamma, u.ln2_beta);
    if (was_2d) out = reshape(out, {out.shape()[1], out.shape()[2]});
    return out;
}

// Guided-attention unit: queries from one modality, keys/values from the other.
template <typename Real>
Tensor<Real> ga_unit(const Tensor<Real>& x_query, const Tensor<Real>& y_kv, const AttentionUnitParams<Real>& u,
                     const RelPosTable<Real>& rel_cross, const MhaConfig& cfg, bool training, Rng& rng) {
    bool xq_2d = false, y_2d = false;
    Tensor<Real> xb = detail::to_batched(x_query, xq_2d);
    Tensor<Real> yb = detail::to_batched(y_kv, y_2d);
    Tensor<Real> att = detail::mha(xb, yb, u, rel_cross, cfg);
    Tensor<Real> t = layer_norm(add(xb, att), u.ln1_gamma, u.ln1_beta);
    Tensor<Real> f = u.ffn2(dropout(relu(u.ffn1(t)), cfg.dropout_rate, training, rng));
    Tensor<Real> out = layer_norm(add(t, f), u.ln2_gamma, u.ln2_beta);
    if (xq_2d) out = reshape(out, {out.shape()[1], out.shape()[2]});
    return out;
}

// ---------------------------------------------------------------------------
// assemblies
// ---------------------------------------------------------------------------

template <typename Real>
struct StackParams {
    std::vector<AttentionUnitParams<Real>> text_sa;   // SA over the word features
    std::vector<AttentionUnitParams<Real>> vis_sa;    // SA over the grid features
    std::vector<AttentionUnitParams<Real>> cross_ga;  // GA: grid queries, word keys/values

    static StackParams init(const MhaConfig& cfg, Rng& rng) {
        cfg.validate();
        StackParams s;
        for (std::size_t i = 0; i < cfg.n_layers; ++i) {
            s.text_sa.push_back(AttentionUnitParams<Real>::init(cfg, rng));
            s.vis_sa.push_back(AttentionUnitParams<Real>::init(cfg, rng));
            s.cross_ga.push_back(AttentionUnitParams<Real>::init(cfg, rng));
        }
        return s;
    }

    void register_into(ParamSet<Real>& ps, const std::string& prefix) {
        for (std::size_t i = 0; i < text_sa.size(); ++i) {
            text_sa[i].register_into(ps, prefix + ".text_sa." + std::to_string(i));
            vis_sa[i].register_into(ps, prefix + ".vis_sa." + std::to_string(i));
            cross_ga[i].register_into(ps, prefix + ".cross_ga." + std::to_string(i));
        }
    }
};

template <typename Real>
struct RelTables {
    RelPosTable<Real> grid;   // grid2d, G^2 x G^2
    RelPosTable<Real> words;  // seq1d, L x L
    RelPosTable<Real> cross;  // cross, G^2 x L
};

template <typename Real>
RelTables<Real> build_rel_tables(std::size_t g, std::size_t seq_len, std::size_t dp) {
    auto cells = grid_cells(g);
    RelTables<Real> t;
    t.grid = build_rel_pos_grid2d<Real>(cells, cells, dp, static_cast<double>(g));
    t.words = build_rel_pos_seq1d<Real>(seq_len, seq_len, dp, static_cast<double>(seq_len));
    t.cross = build_rel_pos_cross<Real>(cells, static_cast<double>(g), seq_len,
                                        static_cast<double>(seq_len), dp);
    return t;
}

// Text fully self-encoded first, then each decoder layer runs SA over the
// grid followed by GA against the final text encoding.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> encoder_decoder_forward(const Tensor<Real>& x_grid,
                                                              const Tensor<Real>& y_words,
                                                              const MhaConfig& cfg,
                                                              const StackParams<Real>& stack,
                                                              const RelTables<Real>& tables, bool training,
                                                              Rng& rng) {
    if (cfg.assembly != Assembly::EncoderDecoder)
        throw ConfigError("encoder_decoder_forward called with stacked config");
    Tensor<Real> y = y_words;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) y = sa_unit(y, stack.text_sa[i], tables.words, cfg, training, rng);
    Tensor<Real> x = x_grid;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        x = sa_unit(x, stack.vis_sa[i], tables.grid, cfg, training, rng);
        x = ga_unit(x, y, stack.cross_ga[i], tables.cross, cfg, training, rng);
    }
    return {x, y};
}

// Text and grid refined together, layer by layer.
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> stacked_forward(const Tensor<Real>& x_grid, const Tensor<Real>& y_words,
                                                      const MhaConfig& cfg, const StackParams<Real>& stack,
                                                      const RelTables<Real>& tables, bool training, Rng& rng) {
    if (cfg.assembly != Assembly::Stacked)
        throw ConfigError("stacked_forward called with encoder_decoder config");
    Tensor<Real> x = x_grid;
    Tensor<Real> y = y_words;
    for (std::size_t i = 0; i < cfg.n_layers; ++i) {
        y = sa_unit(y, stack.text_sa[i], tables.words, cfg, training, rng);
        x = sa_unit(x, stack.vis_sa[i], tables.grid, cfg, training, rng);
        x = ga_unit(x, y, stack.cross_ga[i], tables.cross, cfg, training, rng);
    }
    return {x, y};
}

template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> attention_stack_forward(const Tensor<Real>& x_grid,
                                                              const Tensor<Real>& y_words,
                                                              const MhaConfig& cfg,
                                                              const StackParams<Real>& stack,
                                                              const RelTables<Real>& tables, bool training,
                                                              Rng& rng) {
    return cfg.assembly == Assembly::EncoderDecoder
               ? encoder_decoder_forward(x_grid, y_words, cfg, stack, tables, training, rng)
               : stacked_forward(x_grid, y_words, cfg, stack, tables, training, rng);
}

}  // namespace gft
