#include <doctest.h>

#include <cmath>
#include <vector>

#include "gft/attention.hpp"
#include "gft/grad_check.hpp"

using namespace gft;
using T = Tensor<double>;

namespace {

std::vector<double> rand_vals(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

constexpr double kSigma1 = 0.7310585786300049;  // sigmoid(1)

// ---------------------------------------------------------------------------
// straight-line reference implementation (plain loops, no tensor library)
// ---------------------------------------------------------------------------

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const T& t) {
    std::size_t r = t.shape()[0], c = t.shape()[1];
    Mat m(r, std::vector<double>(c));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
    return m;
}

std::vector<double> to_vec(const T& t) { return t.values(); }

Mat ref_linear(const Mat& x, const Mat& w, const std::vector<double>& b) {
    Mat out(x.size(), std::vector<double>(w[0].size(), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t k = 0; k < w.size(); ++k)
            for (std::size_t j = 0; j < w[0].size(); ++j) out[i][j] += x[i][k] * w[k][j];
    for (auto& row : out)
        for (std::size_t j = 0; j < b.size(); ++j) row[j] += b[j];
    return out;
}

std::vector<double> ref_softmax(const std::vector<double>& v) {
    double mx = v[0];
    for (double x : v) mx = std::max(mx, x);
    std::vector<double> e(v.size());
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        e[i] = std::exp(v[i] - mx);
        s += e[i];
    }
    for (auto& x : e) x /= s;
    return e;
}

std::vector<double> ref_layer_norm_row(const std::vector<double>& v, const std::vector<double>& gamma,
                                       const std::vector<double>& beta, double eps = 1e-6) {
    double mu = 0;
    for (double x : v) mu += x;
    mu /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mu) * (x - mu);
    var /= static_cast<double>(v.size());
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = gamma[i] * (v[i] - mu) / std::sqrt(var + eps) + beta[i];
    return out;
}

struct RefUnit {
    Mat wq, wk, wv, wo, f1, f2;
    std::vector<double> bq, bk, bv, bo, bf1, bf2, g1, b1, g2, b2;
    double theta = 1.0;
    std::vector<double> p;  // single head

    static RefUnit from(const AttentionUnitParams<double>& u) {
        RefUnit r;
        r.wq = to_mat(u.wq.w); r.bq = to_vec(u.wq.b);
        r.wk = to_mat(u.wk.w); r.bk = to_vec(u.wk.b);
        r.wv = to_mat(u.wv.w); r.bv = to_vec(u.wv.b);
        r.wo = to_mat(u.wo.w); r.bo = to_vec(u.wo.b);
        r.f1 = to_mat(u.ffn1.w); r.bf1 = to_vec(u.ffn1.b);
        r.f2 = to_mat(u.ffn2.w); r.bf2 = to_vec(u.ffn2.b);
        r.g1 = to_vec(u.ln1_gamma); r.b1 = to_vec(u.ln1_beta);
        r.g2 = to_vec(u.ln2_gamma); r.b2 = to_vec(u.ln2_beta);
        r.theta = u.gate.theta.data()[0];
        r.p = to_vec(u.gate.p);
        return r;
    }
};

// Single-head gated attention + residual/norm/FFN, mirroring one unit.
Mat ref_unit(const Mat& xq, const Mat& ykv, const RefUnit& u, const T& rel, std::size_t d_head) {
    Mat q = ref_linear(xq, u.wq, u.bq);
    Mat k = ref_linear(ykv, u.wk, u.bk);
    Mat v = ref_linear(ykv, u.wv, u.bv);
    std::size_t m = q.size(), n = k.size(), dp = rel.shape()[2];
    double inv = 1.0 / std::sqrt(static_cast<double>(d_head));
    double gate = 1.0 / (1.0 + std::exp(-u.theta));
    Mat att(m, std::vector<double>(v[0].size(), 0.0));
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> logits(n, 0.0), plogits(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t c = 0; c < q[0].size(); ++c) logits[j] += q[i][c] * k[j][c];
            logits[j] *= inv;
            for (std::size_t c = 0; c < dp; ++c) plogits[j] += u.p[c] * rel.data()[(i * n + j) * dp + c];
        }
        auto fc = ref_softmax(logits);
        auto fp = ref_softmax(plogits);
        std::vector<double> w(n);
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            w[j] = (1.0 - gate) * fc[j] + gate * fp[j];
            sum += w[j];
        }
        for (std::size_t j = 0; j < n; ++j) w[j] /= sum;
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t c = 0; c < v[0].size(); ++c) att[i][c] += w[j] * v[j][c];
    }
    Mat proj = ref_linear(att, u.wo, u.bo);
    Mat t(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> sum(proj[0].size());
        for (std::size_t c = 0; c < sum.size(); ++c) sum[c] = xq[i][c] + proj[i][c];
        t[i] = ref_layer_norm_row(sum, u.g1, u.b1);
    }
    Mat hidden = ref_linear(t, u.f1, u.bf1);
    for (auto& row : hidden)
        for (auto& x : row) x = std::max(0.0, x);
    Mat ffn = ref_linear(hidden, u.f2, u.bf2);
    Mat out(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> sum(ffn[0].size());
        for (std::size_t c = 0; c < sum.size(); ++c) sum[c] = t[i][c] + ffn[i][c];
        out[i] = ref_layer_norm_row(sum, u.g2, u.b2);
    }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("scaled_dot_attention contracts") {
    Rng rng(1);
    // single key: output equals the value row for any query
    auto q = T::from_data({3, 4}, rand_vals(12, rng));
    auto k = T::from_data({1, 4}, rand_vals(4, rng));
    auto v = T::from_data({1, 5}, rand_vals(5, rng));
    auto out = scaled_dot_attention(q, k, v, 4);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(out.output.data()[i * 5 + j] == doctest::Approx(v.data()[j]).epsilon(1e-12));

    // all-zero logits: every row is the column mean of V
    auto q0 = T::zeros({2, 4});
    auto k2 = T::from_data({3, 4}, rand_vals(12, rng));
    auto v2 = T::from_data({3, 2}, {1, 0, 0, 1, 2, 2});
    auto out2 = scaled_dot_attention(q0, k2, v2, 4);
    CHECK(out2.output.data()[0] == doctest::Approx(1.0));
    CHECK(out2.output.data()[1] == doctest::Approx(1.0));

    CHECK_THROWS_AS(scaled_dot_attention(q, k, v, 0), ConfigError);
}

TEST_CASE("scaled_dot_attention hand case m=n=2, d=1") {
    auto q = T::from_data({2, 1}, {1, 0});
    auto k = T::from_data({2, 1}, {1, 0});
    auto v = T::from_data({2, 2}, {1, 0, 0, 1});
    auto out = scaled_dot_attention(q, k, v, 1);
    // frozen from an independent scalar evaluation
    CHECK(out.output.data()[0] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
    CHECK(out.output.data()[1] == doctest::Approx(0.2689414213699951).epsilon(1e-12));
    CHECK(out.output.data()[2] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.output.data()[3] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("rel pos tables: translation consistency") {
    auto cells = grid_cells(3);
    auto grid = build_rel_pos_grid2d<double>(cells, cells, 8, 3.0);
    // zero offset is the same feature vector on every diagonal entry
    for (std::size_t i = 1; i < 9; ++i)
        for (std::size_t c = 0; c < 8; ++c)
            CHECK(grid.r.data()[(i * 9 + i) * 8 + c] ==
                  doctest::Approx(grid.r.data()[0 * 9 * 8 + 0 + c]).epsilon(1e-12));

    auto seq = build_rel_pos_seq1d<double>(5, 5, 6, 5.0);
    for (std::size_t i = 0; i + 1 < 5; ++i)
        for (std::size_t j = 0; j + 1 < 5; ++j)
            for (std::size_t c = 0; c < 6; ++c)
                CHECK(seq.r.data()[(i * 5 + j) * 6 + c] ==
                      doctest::Approx(seq.r.data()[((i + 1) * 5 + j + 1) * 6 + c]).epsilon(1e-12));

    CHECK_THROWS_AS(build_rel_pos_grid2d<double>({}, cells, 8, 3.0), DimensionError);
}

TEST_CASE("rel pos grid2d matches an independent reimplementation") {
    const std::size_t g = 3, dp = 8;
    auto cells = grid_cells(g);
    auto table = build_rel_pos_grid2d<double>(cells, cells, dp, static_cast<double>(g));
    const double pi = 3.14159265358979323846;
    for (std::size_t qi = 0; qi < 9; ++qi)
        for (std::size_t ki = 0; ki < 9; ++ki) {
            double dr = (cells[qi].row - cells[ki].row) / 3.0;
            double dc = (cells[qi].col - cells[ki].col) / 3.0;
            double dist = std::sqrt(dr * dr + dc * dc);
            double scalars[3] = {dr, dc, dist};
            for (std::size_t c = 0; c < dp; ++c) {
                std::size_t k = c / 3;
                double omega = pi * std::pow(2.0, static_cast<double>(k / 2));
                double x = omega * scalars[c % 3];
                double expected = (k % 2 == 0) ? std::sin(x) : std::cos(x);
                CHECK(table.r.data()[(qi * 9 + ki) * dp + c] == doctest::Approx(expected).epsilon(1e-12));
            }
        }
}

TEST_CASE("gated attention: closed gates reproduce the pure paths") {
    Rng rng(2);
    std::size_t m = 4, n = 6, d = 5, dp = 4;
    auto q = T::from_data({m, d}, rand_vals(m * d, rng));
    auto k = T::from_data({n, d}, rand_vals(n * d, rng));
    auto v = T::from_data({n, 3}, rand_vals(n * 3, rng));
    auto rel = build_rel_pos_seq1d<double>(m, n, dp, 6.0);
    auto p = T::from_data({1, dp}, rand_vals(dp, rng));

    // theta = -30: sigma ~ 0, positional path shut, equals plain attention
    auto closed = gated_attention(q, k, v, rel, T::from_data({1}, {-30.0}), p, d);
    auto plain = scaled_dot_attention(q, k, v, d);
    for (std::size_t i = 0; i < closed.output.size(); ++i)
        CHECK(std::abs(closed.output.data()[i] - plain.output.data()[i]) < 1e-6);

    // theta = +30: rows equal Softmax(P^T r), independent of Q and K
    auto open = gated_attention(q, k, v, rel, T::from_data({1}, {30.0}), p, d);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<double> plog(n);
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t c = 0; c < dp; ++c) s += p.data()[c] * rel.r.data()[(i * n + j) * dp + c];
            plog[j] = s;
        }
        auto fp = ref_softmax(plog);
        for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(open.weights.data()[i * n + j] - fp[j]) < 1e-6);
    }
}

TEST_CASE("gated attention: theta = 1 mixes with weight sigmoid(1)") {
    Rng rng(3);
    std::size_t m = 3, n = 4, d = 4, dp = 4;
    auto q = T::from_data({m, d}, rand_vals(m * d, rng));
    auto k = T::from_data({n, d}, rand_vals(n * d, rng));
    auto v = T::from_data({n, 2}, rand_vals(n * 2, rng));
    auto rel = build_rel_pos_seq1d<double>(m, n, dp, 4.0);
    auto p = T::from_data({1, dp}, rand_vals(dp, rng));
    auto out = gated_attention(q, k, v, rel, T::from_data({1}, {1.0}), p, d);
    // combined row = (1 - sigma(1)) f_c + sigma(1) f_p; both operands are
    // row-stochastic so the renormalization is a no-op within fp error
    for (std::size_t i = 0; i < m * n; ++i) {
        double expected = (1.0 - kSigma1) * out.content.data()[i] + kSigma1 * out.positional.data()[i];
        CHECK(std::abs(out.weights.data()[i] - expected) < 1e-12);
    }
    CHECK(std::abs(1.0 / (1.0 + std::exp(-1.0)) - 0.7310585786300049) < 1e-7);
}

TEST_CASE("gated attention: all weight matrices are row-stochastic") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t m = 1 + rng.uniform_index(5), n = 1 + rng.uniform_index(6);
        std::size_t d = 2 + rng.uniform_index(4), dp = 2 + rng.uniform_index(5);
        auto q = T::from_data({m, d}, rand_vals(m * d, rng, -3, 3));
        auto k = T::from_data({n, d}, rand_vals(n * d, rng, -3, 3));
        auto v = T::from_data({n, d}, rand_vals(n * d, rng));
        auto rel = build_rel_pos_seq1d<double>(m, n, dp, static_cast<double>(n));
        auto theta = T::from_data({1}, {rng.uniform(-4, 4)});
        auto p = T::from_data({1, dp}, rand_vals(dp, rng, -2, 2));
        auto out = gated_attention(q, k, v, rel, theta, p, d);
        for (const T* w : {&out.weights, &out.content, &out.positional}) {
            std::size_t rows = w->size() / n;
            for (std::size_t i = 0; i < rows; ++i) {
                double s = 0;
                for (std::size_t j = 0; j < n; ++j) s += w->data()[i * n + j];
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("positional path is content independent") {
    Rng rng(5);
    std::size_t m = 3, n = 5, d = 4, dp = 6;
    auto rel = build_rel_pos_seq1d<double>(m, n, dp, 5.0);
    auto theta = T::from_data({1}, {0.3});
    auto p = T::from_data({1, dp}, rand_vals(dp, rng));
    auto v = T::from_data({n, d}, rand_vals(n * d, rng));
    auto out1 = gated_attention(T::from_data({m, d}, rand_vals(m * d, rng)),
                                T::from_data({n, d}, rand_vals(n * d, rng)), v, rel, theta, p, d);
    auto out2 = gated_attention(T::from_data({m, d}, rand_vals(m * d, rng)),
                                T::from_data({n, d}, rand_vals(n * d, rng)), v, rel, theta, p, d);
    for (std::size_t i = 0; i < m * n; ++i)
        CHECK(out1.positional.data()[i] == doctest::Approx(out2.positional.data()[i]).epsilon(1e-12));
}

TEST_CASE("theta receives gradient") {
    MhaConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_head = 4;
    cfg.ffn_hidden = 16;
    cfg.n_layers = 1;
    cfg.d_pos = 4;
    cfg.dropout_rate = 0.0;
    Rng init(6);
    auto unit = AttentionUnitParams<double>::init(cfg, init);
    ParamSet<double> ps;
    unit.register_into(ps, "u");
    Rng rng(7);
    auto x = T::from_data({5, 8}, rand_vals(40, rng));
    auto rel = build_rel_pos_seq1d<double>(5, 5, cfg.d_pos, 5.0);
    ps.zero_grads();
    Rng drop(0);
    auto out = sa_unit(x, unit, rel, cfg, false, drop);
    Rng probe_rng(8);
    backward(sum_all(mul(out, T::from_data(out.shape(), rand_vals(out.size(), probe_rng)))));
    const auto& g = unit.gate.theta.grad();
    bool any_nonzero = false;
    for (double v : g) any_nonzero = any_nonzero || v != 0.0;
    CHECK(any_nonzero);
}

TEST_CASE("sa_unit keeps shape; zero FFN + closed gate reduces to attention+norm") {
    MhaConfig cfg;
    cfg.d_model = 4;
    cfg.n_heads = 1;
    cfg.d_head = 4;
    cfg.ffn_hidden = 8;
    cfg.n_layers = 1;
    cfg.d_pos = 4;
    cfg.dropout_rate = 0.0;
    Rng init(9);
    auto unit = AttentionUnitParams<double>::init(cfg, init);
    Rng rng(10);
    for (std::size_t n : {1u, 3u, 7u}) {
        auto x = T::from_data({n, 4}, rand_vals(n * 4, rng));
        auto rel = build_rel_pos_seq1d<double>(n, n, cfg.d_pos, static_cast<double>(n));
        Rng drop(0);
        auto out = sa_unit(x, unit, rel, cfg, false, drop);
        CHECK(out.shape() == x.shape());
    }

    // identity projections, closed gate, zero FFN
    auto eye = [](std::size_t d) {
        std::vector<double> v(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
        return T::from_data({d, d}, std::move(v));
    };
    unit.wq.w = eye(4); unit.wq.b = T::zeros({4});
    unit.wk.w = eye(4); unit.wk.b = T::zeros({4});
    unit.wv.w = eye(4); unit.wv.b = T::zeros({4});
    unit.wo.w = eye(4); unit.wo.b = T::zeros({4});
    unit.gate.theta = T::from_data({1}, {-30.0});
    unit.ffn1.w = T::zeros({4, 8}); unit.ffn1.b = T::zeros({8});
    unit.ffn2.w = T::zeros({8, 4}); unit.ffn2.b = T::zeros({4});

    auto x = T::from_data({3, 4}, rand_vals(12, rng));
    auto rel = build_rel_pos_seq1d<double>(3, 3, cfg.d_pos, 3.0);
    Rng drop(0);
    auto out = sa_unit(x, unit, rel, cfg, false, drop);
    // expected: LN2(LN1(x + plain_attention(x)))  (FFN contributes zero)
    auto att = scaled_dot_attention(x, x, x, cfg.d_head);
    auto t = layer_norm(add(x, att.output), unit.ln1_gamma, unit.ln1_beta);
    auto expected = layer_norm(t, unit.ln2_gamma, unit.ln2_beta);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-9));
}

TEST_CASE("ga_unit: single key, and key permutation consistency") {
    MhaConfig cfg;
    cfg.d_model = 4;
    cfg.n_heads = 1;
    cfg.d_head = 4;
    cfg.ffn_hidden = 8;
    cfg.n_layers = 1;
    cfg.d_pos = 4;
    cfg.dropout_rate = 0.0;
    Rng init(11);
    auto unit = AttentionUnitParams<double>::init(cfg, init);
    Rng rng(12);
    auto cells = grid_cells(2);

    // single key: shape contract holds, output length is the query count
    auto xq = T::from_data({4, 4}, rand_vals(16, rng));
    auto y1 = T::from_data({1, 4}, rand_vals(4, rng));
    auto rel1 = build_rel_pos_cross<double>(cells, 2.0, 1, 1.0, cfg.d_pos);
    Rng drop(0);
    auto out1 = ga_unit(xq, y1, unit, rel1, cfg, false, drop);
    CHECK(out1.shape() == Shape{4, 4});

    // swapping two keys together with their rel-table columns is a no-op
    std::size_t n = 3;
    auto y = T::from_data({n, 4}, rand_vals(n * 4, rng));
    auto rel = build_rel_pos_cross<double>(cells, 2.0, n, 3.0, cfg.d_pos);
    Rng drop_a(0);
    auto base = ga_unit(xq, y, unit, rel, cfg, false, drop_a);

    std::vector<double> yswap = y.values();
    for (std::size_t c = 0; c < 4; ++c) std::swap(yswap[0 * 4 + c], yswap[2 * 4 + c]);
    auto relswap = rel;
    std::vector<double> rswap = rel.r.values();
    for (std::size_t qi = 0; qi < 4; ++qi)
        for (std::size_t c = 0; c < cfg.d_pos; ++c)
            std::swap(rswap[(qi * n + 0) * cfg.d_pos + c], rswap[(qi * n + 2) * cfg.d_pos + c]);
    relswap.r = T::from_data({4, n, cfg.d_pos}, std::move(rswap));
    Rng drop_b(0);
    auto swapped = ga_unit(T::from_data({4, 4}, xq.values()), T::from_data({n, 4}, std::move(yswap)), unit,
                           relswap, cfg, false, drop_b);
    for (std::size_t i = 0; i < base.size(); ++i)
        CHECK(base.data()[i] == doctest::Approx(swapped.data()[i]).epsilon(1e-9));
}

TEST_CASE("gate-limit equivalence at the unit level") {
    MhaConfig gated_cfg;
    gated_cfg.d_model = 8;
    gated_cfg.n_heads = 2;
    gated_cfg.d_head = 4;
    gated_cfg.ffn_hidden = 16;
    gated_cfg.n_layers = 1;
    gated_cfg.d_pos = 4;
    gated_cfg.dropout_rate = 0.0;
    Rng init(13);
    auto unit = AttentionUnitParams<double>::init(gated_cfg, init);
    unit.gate.theta = T::from_data({2}, {-30.0, -30.0});

    auto plain_cfg = gated_cfg;
    plain_cfg.gated = false;
    auto plain = unit;
    plain.gated = false;

    Rng rng(14);
    auto x = T::from_data({6, 8}, rand_vals(48, rng));
    auto rel = build_rel_pos_seq1d<double>(6, 6, gated_cfg.d_pos, 6.0);
    Rng d1(0), d2(0);
    auto a = sa_unit(x, unit, rel, gated_cfg, false, d1);
    auto b = sa_unit(x, plain, rel, plain_cfg, false, d2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-6);
}

TEST_CASE("assembly micro-instance matches the straight-line reference") {
    MhaConfig cfg;
    cfg.d_model = 4;
    cfg.n_heads = 1;
    cfg.d_head = 4;
    cfg.ffn_hidden = 8;
    cfg.n_layers = 2;
    cfg.d_pos = 4;
    cfg.dropout_rate = 0.0;
    std::size_t g = 2, seq = 3;
    auto tables = build_rel_tables<double>(g, seq, cfg.d_pos);
    Rng rng(16);
    auto x = T::from_data({g * g, 4}, rand_vals(g * g * 4, rng));
    auto y = T::from_data({seq, 4}, rand_vals(seq * 4, rng));

    for (Assembly assembly : {Assembly::EncoderDecoder, Assembly::Stacked}) {
        cfg.assembly = assembly;
        Rng init(15);
        auto stack = StackParams<double>::init(cfg, init);
        Rng drop(0);
        auto [xa, ya] = attention_stack_forward(x, y, cfg, stack, tables, false, drop);
        CHECK(xa.shape() == Shape{g * g, 4});
        CHECK(ya.shape() == Shape{seq, 4});

        // straight-line reference with the same weights
        Mat rx = to_mat(x), ry = to_mat(y);
        if (assembly == Assembly::EncoderDecoder) {
            for (std::size_t i = 0; i < cfg.n_layers; ++i)
                ry = ref_unit(ry, ry, RefUnit::from(stack.text_sa[i]), tables.words.r, cfg.d_head);
            for (std::size_t i = 0; i < cfg.n_layers; ++i) {
                rx = ref_unit(rx, rx, RefUnit::from(stack.vis_sa[i]), tables.grid.r, cfg.d_head);
                rx = ref_unit(rx, ry, RefUnit::from(stack.cross_ga[i]), tables.cross.r, cfg.d_head);
            }
        } else {
            for (std::size_t i = 0; i < cfg.n_layers; ++i) {
                ry = ref_unit(ry, ry, RefUnit::from(stack.text_sa[i]), tables.words.r, cfg.d_head);
                rx = ref_unit(rx, rx, RefUnit::from(stack.vis_sa[i]), tables.grid.r, cfg.d_head);
                rx = ref_unit(rx, ry, RefUnit::from(stack.cross_ga[i]), tables.cross.r, cfg.d_head);
            }
        }
        for (std::size_t i = 0; i < g * g; ++i)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(xa.data()[i * 4 + c] == doctest::Approx(rx[i][c]).epsilon(1e-9));
        for (std::size_t i = 0; i < seq; ++i)
            for (std::size_t c = 0; c < 4; ++c)
                CHECK(ya.data()[i * 4 + c] == doctest::Approx(ry[i][c]).epsilon(1e-9));
    }
}

TEST_CASE("two-layer assemblies genuinely differ") {
    MhaConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_head = 4;
    cfg.ffn_hidden = 16;
    cfg.n_layers = 2;
    cfg.d_pos = 4;
    cfg.dropout_rate = 0.0;
    Rng init(17);
    auto stack = StackParams<double>::init(cfg, init);
    auto tables = build_rel_tables<double>(2, 3, cfg.d_pos);
    Rng rng(18);
    auto x = T::from_data({4, 8}, rand_vals(32, rng));
    auto y = T::from_data({3, 8}, rand_vals(24, rng));
    cfg.assembly = Assembly::EncoderDecoder;
    Rng d1(0);
    auto ed = encoder_decoder_forward(x, y, cfg, stack, tables, false, d1);
    cfg.assembly = Assembly::Stacked;
    Rng d2(0);
    auto st = stacked_forward(x, y, cfg, stack, tables, false, d2);
    double diff = 0;
    for (std::size_t i = 0; i < ed.first.size(); ++i)
        diff = std::max(diff, std::abs(ed.first.data()[i] - st.first.data()[i]));
    CHECK(diff > 1e-8);
}

TEST_CASE("parameter count regression pin for the full-size stack") {
    MhaConfig cfg;  // d_model 512, 8 heads, d_head 64, 6 layers, d_pos 16
    Rng init(19);
    auto stack = StackParams<float>::init(cfg, init);
    ParamSet<float> ps;
    stack.register_into(ps, "stack");
    // closed form: 3 units per layer; per unit 4 projections, gate, 2 FFN
    // linears, 2 layer-norm pairs
    auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
    std::size_t unit = 4 * linear(512, 512) + (8 * (1 + 16)) + linear(512, 2048) + linear(2048, 512) +
                       2 * (512 + 512);
    std::size_t expected = 3 * 6 * unit;
    CHECK(ps.total_values() == expected);
    CHECK(ps.total_values() == 56745360u);  // regression pin
}

TEST_CASE("config invariants") {
    MhaConfig bad;
    bad.n_heads = 3;  // 3 * 64 != 512
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    MhaConfig bad2;
    bad2.n_layers = 0;
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_SUITE_END();
