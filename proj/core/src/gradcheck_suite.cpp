#include "gft/gradcheck_suite.hpp"

#include <chrono>
#include <functional>

#include "gft/attention.hpp"
#include "gft/fusion.hpp"
#include "gft/model.hpp"

namespace gft {

namespace {

using T = Tensor<double>;

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

// Scalar probe of a non-scalar output: fixed random weights per component.
T probe(const T& out, std::uint64_t seed) {
    Rng rng(seed);
    T w = T::from_data(out.shape(), random_values(out.size(), rng));
    return sum_all(mul(out, w));
}

struct SuiteBuilder {
    GradSuiteResult result;

    void run(const std::string& name, double tol, ParamSet<double>& params,
             const std::function<T()>& f, double eps = 1e-5) {
        GradSuiteCase c;
        c.name = name;
        c.tolerance = tol;
        c.max_rel_err = finite_diff_check(f, params, eps).max_rel_err();
        c.pass = c.max_rel_err < tol;
        result.cases.push_back(c);
    }
};

void tensor_cases(SuiteBuilder& sb) {
    Rng rng(0x7e4501);
    {
        ParamSet<double> ps;
        auto& a = ps.add("a", T::from_data({3, 4}, random_values(12, rng)));
        auto& b = ps.add("b", T::from_data({4, 2}, random_values(8, rng)));
        sb.run("matmul 3x4 * 4x2", 1e-4, ps, [&]() { return probe(matmul(a, b), 11); });
    }
    {
        ParamSet<double> ps;
        auto& a = ps.add("a", T::from_data({2, 2, 3}, random_values(12, rng)));
        auto& b = ps.add("b", T::from_data({3, 2}, random_values(6, rng)));
        sb.run("matmul batched broadcast", 1e-4, ps, [&]() { return probe(matmul(a, b), 12); });
    }
    {
        ParamSet<double> ps;
        auto& x = ps.add("x", T::from_data({3, 5}, random_values(15, rng, -2, 2)));
        sb.run("softmax", 1e-4, ps, [&]() { return probe(softmax(x, -1), 13); });
    }
    {
        ParamSet<double> ps;
        auto& x = ps.add("x", T::from_data({2, 8}, random_values(16, rng)));
        auto& g = ps.add("gamma", T::from_data({8}, random_values(8, rng, 0.5, 1.5)));
        auto& b = ps.add("beta", T::from_data({8}, random_values(8, rng)));
        sb.run("layer_norm 2x8", 1e-4, ps, [&]() { return probe(layer_norm(x, g, b), 14); });
    }
    {
        // inputs bounded away from the relu kink
        ParamSet<double> ps;
        std::vector<double> v(12);
        for (auto& x : v) {
            x = rng.uniform(0.2, 1.5);
            if (rng.bernoulli(0.5)) x = -x;
        }
        auto& x = ps.add("x", T::from_data({3, 4}, std::move(v)));
        sb.run("relu", 1e-4, ps, [&]() { return probe(relu(x), 15); });
    }
    {
        ParamSet<double> ps;
        auto& x = ps.add("x", T::from_data({3, 4}, random_values(12, rng, -2, 2)));
        sb.run("sigmoid", 1e-4, ps, [&]() { return probe(sigmoid(x), 16); });
        sb.run("tanh", 1e-4, ps, [&]() { return probe(tanh(x), 17); });
    }
    {
        ParamSet<double> ps;
        auto& a = ps.add("a", T::from_data({2, 3, 4}, random_values(24, rng)));
        auto& b = ps.add("b", T::from_data({4}, random_values(4, rng, 0.5, 1.5)));
        sb.run("add broadcast", 1e-4, ps, [&]() { return probe(add(a, b), 18); });
        sb.run("mul broadcast", 1e-4, ps, [&]() { return probe(mul(a, b), 19); });
        sb.run("div broadcast", 1e-4, ps, [&]() { return probe(div(a, b), 20); });
    }
    {
        ParamSet<double> ps;
        auto& x = ps.add("x", T::from_data({4, 6}, random_values(24, rng)));
        sb.run("dropout (training)", 1e-4, ps, [&]() {
            Rng drop_rng(99);
            return probe(dropout(x, 0.3, true, drop_rng), 21);
        });
    }
    {
        ParamSet<double> ps;
        auto& table = ps.add("table", T::from_data({5, 4}, random_values(20, rng)));
        std::vector<long> ids = {0, 3, 3, 1, 4, 2};
        sb.run("embedding_lookup 5x4", 1e-4, ps,
               [&]() { return probe(embedding_lookup(table, ids, {2, 3}), 22); });
    }
    {
        // full 3-step recurrence through one loss
        ParamSet<double> ps;
        std::size_t e = 3, hdim = 4;
        LstmWeights<double> w;
        w.wx = ps.add("wx", T::from_data({e, 4 * hdim}, random_values(e * 4 * hdim, rng, -0.5, 0.5)));
        w.wh = ps.add("wh", T::from_data({hdim, 4 * hdim}, random_values(hdim * 4 * hdim, rng, -0.5, 0.5)));
        w.b = ps.add("b", T::from_data({4 * hdim}, random_values(4 * hdim, rng, -0.2, 0.2)));
        auto& x0 = ps.add("x0", T::from_data({2, e}, random_values(2 * e, rng)));
        auto& x1 = ps.add("x1", T::from_data({2, e}, random_values(2 * e, rng)));
        auto& x2 = ps.add("x2", T::from_data({2, e}, random_values(2 * e, rng)));
        sb.run("lstm 3-step sequence", 1e-3, ps, [&]() {
            T h = T::zeros({2, hdim});
            T c = T::zeros({2, hdim});
            for (const T* xt : {&x0, &x1, &x2}) {
                auto [h2, c2] = lstm_step(*xt, h, c, w);
                h = h2;
                c = c2;
            }
            return probe(h, 23);
        });
    }
    {
        ParamSet<double> ps;
        auto& logits = ps.add("logits", T::from_data({2, 4}, random_values(8, rng, -1.5, 1.5)));
        T target = T::from_data({2, 4}, {1, 0, 0, 1, 0, 1, 0, 0});
        sb.run("bce_loss 2x4", 1e-4, ps, [&]() { return bce_loss(sigmoid(logits), target); });
    }
    {
        ParamSet<double> ps;
        auto& x = ps.add("x", T::from_data({2, 2, 6, 6}, random_values(2 * 2 * 36, rng)));
        auto& w = ps.add("w", T::from_data({3, 2, 3, 3}, random_values(3 * 2 * 9, rng, -0.5, 0.5)));
        auto& b = ps.add("b", T::from_data({3}, random_values(3, rng, -0.2, 0.2)));
        sb.run("conv2d stride 2", 1e-4, ps, [&]() { return probe(conv2d(x, w, b, 2, 1), 24); });
    }
    {
        ParamSet<double> ps;
        auto& x = ps.add("x", T::from_data({2, 3, 4}, random_values(24, rng)));
        sb.run("transpose/reshape/narrow/concat", 1e-4, ps, [&]() {
            T t = transpose(x, {1, 0, 2});
            T r = reshape(t, {3, 8});
            T n1 = narrow(r, 1, 0, 3);
            T n2 = narrow(r, 1, 3, 5);
            return probe(concat<double>({n2, n1}, 1), 25);
        });
        sb.run("sum_axis", 1e-4, ps, [&]() { return probe(sum_axis(x, 1), 26); });
    }
}

MhaConfig micro_mha(bool gated) {
    MhaConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_head = 4;
    cfg.ffn_hidden = 16;
    cfg.n_layers = 1;
    cfg.d_pos = 4;
    cfg.dropout_rate = 0.0;
    cfg.gated = gated;
    return cfg;
}

void attention_cases(SuiteBuilder& sb) {
    Rng rng(0xa77e);
    {
        ParamSet<double> ps;
        auto& q = ps.add("q", T::from_data({3, 4}, random_values(12, rng)));
        auto& k = ps.add("k", T::from_data({5, 4}, random_values(20, rng)));
        auto& v = ps.add("v", T::from_data({5, 6}, random_values(30, rng)));
        sb.run("scaled_dot_attention", 1e-4, ps,
               [&]() { return probe(scaled_dot_attention(q, k, v, 4).output, 31); });
    }
    {
        ParamSet<double> ps;
        auto rel = build_rel_pos_seq1d<double>(3, 5, 4, 5.0);
        auto& q = ps.add("q", T::from_data({3, 4}, random_values(12, rng)));
        auto& k = ps.add("k", T::from_data({5, 4}, random_values(20, rng)));
        auto& v = ps.add("v", T::from_data({5, 6}, random_values(30, rng)));
        auto& theta = ps.add("theta", T::from_data({1}, {1.0}));
        auto& p = ps.add("p", T::from_data({1, 4}, random_values(4, rng)));
        sb.run("gated_attention", 1e-4, ps,
               [&]() { return probe(gated_attention(q, k, v, rel, theta, p, 4).output, 32); });
    }
    {
        MhaConfig cfg = micro_mha(true);
        Rng init(5);
        auto unit = AttentionUnitParams<double>::init(cfg, init);
        ParamSet<double> ps;
        unit.register_into(ps, "sa");
        auto& x = ps.add("input", T::from_data({5, 8}, random_values(40, rng, -0.5, 0.5)));
        auto rel = build_rel_pos_seq1d<double>(5, 5, cfg.d_pos, 5.0);
        sb.run("sa_unit end-to-end", 1e-3, ps, [&]() {
            Rng r(0);
            return probe(sa_unit(x, unit, rel, cfg, false, r), 33);
        });
    }
    {
        MhaConfig cfg = micro_mha(true);
        Rng init(6);
        auto unit = AttentionUnitParams<double>::init(cfg, init);
        ParamSet<double> ps;
        unit.register_into(ps, "ga");
        auto& xq = ps.add("xq", T::from_data({4, 8}, random_values(32, rng, -0.5, 0.5)));
        auto& y = ps.add("y", T::from_data({3, 8}, random_values(24, rng, -0.5, 0.5)));
        auto cells = grid_cells(2);
        auto rel = build_rel_pos_cross<double>(cells, 2.0, 3, 3.0, cfg.d_pos);
        sb.run("ga_unit end-to-end", 1e-3, ps, [&]() {
            Rng r(0);
            return probe(ga_unit(xq, y, unit, rel, cfg, false, r), 34);
        });
    }
}

void fusion_cases(SuiteBuilder& sb) {
    Rng rng(0xf0510);
    {
        Rng init(7);
        auto rp = ReduceParams<double>::init(8, init);
        ParamSet<double> ps;
        rp.register_into(ps, "reduce");
        auto& z = ps.add("z", T::from_data({4, 8}, random_values(32, rng)));
        sb.run("attentional_reduce", 1e-4, ps, [&]() {
            Rng r(0);
            return probe(attentional_reduce(z, rp, 0.0, false, r), 41);
        });
    }
    {
        Rng init(8);
        auto mf = MutualFusionParams<double>::init(8, init);
        ParamSet<double> ps;
        mf.register_into(ps, "mf");
        auto& xp = ps.add("xp", T::from_data({2, 8}, random_values(16, rng)));
        auto& yp = ps.add("yp", T::from_data({2, 8}, random_values(16, rng)));
        sb.run("mutual_fusion", 1e-3, ps, [&]() {
            Rng r(0);
            return probe(mutual_fusion(xp, yp, mf, 0.0, false, r), 42);
        });
    }
    {
        Rng init(9);
        auto bf = BaselineFuseParams<double>::init(8, init);
        ParamSet<double> ps;
        bf.register_into(ps, "bf");
        auto& xp = ps.add("xp", T::from_data({2, 8}, random_values(16, rng)));
        auto& yp = ps.add("yp", T::from_data({2, 8}, random_values(16, rng)));
        sb.run("baseline_fuse", 1e-4, ps, [&]() { return probe(baseline_fuse(xp, yp, bf), 43); });
    }
    {
        Rng init(10);
        auto mf = MutualFusionParams<double>::init(8, init);
        auto cls = ClassifierParams<double>::init(8, 5, init);
        ParamSet<double> ps;
        mf.register_into(ps, "mf");
        cls.register_into(ps, "cls");
        auto& xp = ps.add("xp", T::from_data({2, 8}, random_values(16, rng)));
        auto& yp = ps.add("yp", T::from_data({2, 8}, random_values(16, rng)));
        T target = T::from_data({2, 5}, {1, 0, 0, 0, 0, 0, 0, 1, 0, 0});
        sb.run("classify(mutual_fusion)", 1e-3, ps, [&]() {
            Rng r(0);
            return bce_loss(classify(mutual_fusion(xp, yp, mf, 0.0, false, r), cls), target);
        });
    }
}

void model_cases(SuiteBuilder& sb) {
    for (Assembly assembly : {Assembly::EncoderDecoder, Assembly::Stacked}) {
        ModelConfig cfg;
        cfg.d_model = 8;
        cfg.n_heads = 2;
        cfg.d_head = 4;
        cfg.ffn_hidden = 16;
        cfg.n_layers = 1;
        cfg.assembly = assembly;
        cfg.gated_attention = true;
        cfg.mutual_fusion = true;
        cfg.d_pos = 4;
        cfg.dropout = 0.0;
        cfg.grid = 3;
        cfg.image_size = 12;
        cfg.embed_dim = 6;
        cfg.lstm_hidden = 8;
        cfg.max_q_len = 4;
        VqaModel<double> model(cfg, 10, 5, 0x11);
        Rng rng(0x77);
        T images = T::from_data({2, 3, 12, 12}, random_values(2 * 3 * 144, rng, 0.0, 1.0));
        std::vector<long> ids = {1, 4, 2, 0, 3, 9, 5, 2};
        T target = T::from_data({2, 5}, {0, 1, 0, 0, 0, 0, 0, 0, 1, 0});
        sb.run(std::string("full 1-layer model (") + to_string(assembly) + ")", 1e-3, model.params(), [&]() {
            Rng r(0);
            return bce_loss(model.forward(images, ids, false, r), target);
        });
    }
}

}  // namespace

GradSuiteResult run_gradcheck_suite(const std::string& selector) {
    auto start = std::chrono::steady_clock::now();
    SuiteBuilder sb;
    bool all = selector == "all";
    if (all || selector == "tensor") tensor_cases(sb);
    if (all || selector == "attention") attention_cases(sb);
    if (all || selector == "fusion") fusion_cases(sb);
    if (all || selector == "model") model_cases(sb);
    if (sb.result.cases.empty())
        throw ConfigError("unknown gradcheck selector '" + selector + "' (tensor|attention|fusion|model|all)");
    sb.result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sb.result;
}

}  // namespace gft
