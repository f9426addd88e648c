#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "gft/grad_check.hpp"
#include "gft/ops.hpp"
#include "gft/param_set.hpp"

using namespace gft;
using T = Tensor<double>;
using TF = Tensor<float>;

namespace {

std::vector<double> rand_vals(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

T probe(const T& out, std::uint64_t seed) {
    Rng rng(seed);
    return sum_all(mul(out, T::from_data(out.shape(), rand_vals(out.size(), rng))));
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and 1x2*2x1") {
    auto i2 = T::from_data({2, 2}, {1, 0, 0, 1});
    auto m = T::from_data({2, 2}, {1, 2, 3, 4});
    auto r = matmul(i2, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.data()[i] == doctest::Approx(m.data()[i]));

    auto a = T::from_data({1, 2}, {1, 2});
    auto b = T::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).item() == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Rng rng(1);
    auto a = T::from_data({2, 3}, rand_vals(6, rng));
    auto b = T::from_data({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimensionError);
    try {
        matmul(a, b);
    } catch (const DimensionError& e) {
        CHECK(std::string(e.what()).find("[2,2]") != std::string::npos);
    }
}

TEST_CASE("matmul 3x4*4x2 gradient vs central differences") {
    Rng rng(42);
    ParamSet<double> ps;
    auto& a = ps.add("a", T::from_data({3, 4}, rand_vals(12, rng)));
    auto& b = ps.add("b", T::from_data({4, 2}, rand_vals(8, rng)));
    auto report = finite_diff_check([&]() { return probe(matmul(a, b), 7); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("softmax frozen reference and contracts") {
    auto x = T::from_data({2}, {0, 0});
    auto y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] == doctest::Approx(0.5));

    // max-shift keeps huge logits finite
    auto big = softmax(T::from_data({2}, {1000, 0}), 0);
    CHECK(big.data()[0] == doctest::Approx(1.0));
    CHECK(big.data()[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(big.data()[0]));

    // frozen values from an independent 64-bit evaluation
    auto r = softmax(T::from_data({3}, {1, 2, 3}), 0);
    CHECK(r.data()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
    CHECK(r.data()[1] == doctest::Approx(0.24472847105479767).epsilon(1e-12));
    CHECK(r.data()[2] == doctest::Approx(0.6652409557748219).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to 1 and are permutation equivariant") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 2 + rng.uniform_index(6);
        auto vals = rand_vals(3 * n, rng, -5, 5);
        auto y = softmax(T::from_data({3, n}, vals), -1);
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += y.data()[r * n + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
        // permute one row and compare against permuted outputs
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        std::vector<double> permuted(n);
        for (std::size_t i = 0; i < n; ++i) permuted[i] = vals[perm[i]];
        auto yp = softmax(T::from_data({n}, permuted), 0);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(yp.data()[i] == doctest::Approx(y.data()[perm[i]]).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm constant row collapses to beta") {
    auto x = T::from_data({1, 3}, {5, 5, 5});
    auto gamma = T::full({3}, 1.0);
    auto beta = T::zeros({3});
    auto y = layer_norm(x, gamma, beta);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y.data()[i]) < 1e-9);

    auto beta1 = T::full({3}, 1.0);
    auto y2 = layer_norm(x, gamma, beta1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y2.data()[i] == doctest::Approx(1.0));
}

TEST_CASE("layer_norm normalizes mean and variance") {
    Rng rng(5);
    auto x = T::from_data({4, 16}, rand_vals(64, rng, -3, 3));
    auto y = layer_norm(x, T::full({16}, 1.0), T::zeros({16}), 1e-10);
    for (std::size_t r = 0; r < 4; ++r) {
        double mu = 0, var = 0;
        for (std::size_t j = 0; j < 16; ++j) mu += y.data()[r * 16 + j];
        mu /= 16;
        for (std::size_t j = 0; j < 16; ++j) {
            double d = y.data()[r * 16 + j] - mu;
            var += d * d;
        }
        var /= 16;
        CHECK(std::abs(mu) < 1e-7);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("layer_norm gradient on random 2x8") {
    Rng rng(6);
    ParamSet<double> ps;
    auto& x = ps.add("x", T::from_data({2, 8}, rand_vals(16, rng)));
    auto& g = ps.add("gamma", T::from_data({8}, rand_vals(8, rng, 0.5, 1.5)));
    auto& b = ps.add("beta", T::from_data({8}, rand_vals(8, rng)));
    auto report = finite_diff_check([&]() { return probe(layer_norm(x, g, b), 8); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("pointwise basics") {
    CHECK(sigmoid(T::scalar(0.0)).item() == doctest::Approx(0.5));
    auto x = T::from_data({3}, {-1, 0, 2});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.0);
}

TEST_CASE("relu gradient away from the kink") {
    Rng rng(7);
    ParamSet<double> ps;
    std::vector<double> v(12);
    for (auto& e : v) {
        e = rng.uniform(0.2, 1.5);
        if (rng.bernoulli(0.5)) e = -e;
    }
    auto& x = ps.add("x", T::from_data({3, 4}, std::move(v)));
    auto report = finite_diff_check([&]() { return probe(relu(x), 9); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("dropout contracts") {
    Rng rng(11);
    auto x = TF::from_data({4, 8}, std::vector<float>(32, 2.0f));
    // rate 0 is the identity
    auto y0 = dropout(x, 0.0, true, rng);
    CHECK(y0.node().get() == x.node().get());
    // eval mode is the exact identity regardless of rate
    auto y1 = dropout(x, 0.5, false, rng);
    CHECK(y1.node().get() == x.node().get());
    // training mode zeroes some entries and rescales the rest
    Rng rng2(12);
    auto y2 = dropout(x, 0.5, true, rng2);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < y2.size(); ++i) {
        if (y2.data()[i] == 0.0f)
            ++zeros;
        else
            CHECK(y2.data()[i] == doctest::Approx(4.0f));
    }
    CHECK(zeros > 0);
    CHECK(zeros < 32);
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ConfigError);
}

TEST_CASE("embedding lookup gathers rows and accumulates repeated ids") {
    auto table = T::from_data({3, 2}, {0, 0, 1, 2, 3, 4});
    table.set_requires_grad(true);
    auto out = embedding_lookup(table, {0}, {1});
    CHECK(out.data()[0] == 0.0);
    CHECK(out.data()[1] == 0.0);

    table.zero_grad();
    auto out2 = embedding_lookup(table, {1, 1}, {2});
    backward(sum_all(out2));
    CHECK(table.grad()[2] == doctest::Approx(2.0));  // row 1 hit twice
    CHECK(table.grad()[4] == doctest::Approx(0.0));

    CHECK_THROWS_WITH_AS(embedding_lookup(table, {7}, {1}), doctest::Contains("7"), IndexError);
}

TEST_CASE("embedding gradient on 5x4 table") {
    Rng rng(13);
    ParamSet<double> ps;
    auto& table = ps.add("table", T::from_data({5, 4}, rand_vals(20, rng)));
    std::vector<long> ids = {4, 0, 0, 2, 3, 1};
    auto report = finite_diff_check([&]() { return probe(embedding_lookup(table, ids, {3, 2}), 10); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("lstm_step zero weights give zero h, bounded outputs") {
    std::size_t e = 3, h = 4;
    LstmWeights<double> w;
    w.wx = T::zeros({e, 4 * h});
    w.wh = T::zeros({h, 4 * h});
    w.b = T::zeros({4 * h});
    auto [h1, c1] = lstm_step(T::zeros({1, e}), T::zeros({1, h}), T::zeros({1, h}), w);
    for (std::size_t i = 0; i < h; ++i) CHECK(h1.data()[i] == doctest::Approx(0.0));

    Rng rng(14);
    LstmWeights<double> w2;
    w2.wx = T::from_data({e, 4 * h}, rand_vals(e * 4 * h, rng, -2, 2));
    w2.wh = T::from_data({h, 4 * h}, rand_vals(h * 4 * h, rng, -2, 2));
    w2.b = T::from_data({4 * h}, rand_vals(4 * h, rng, -2, 2));
    auto ht = T::from_data({2, h}, rand_vals(2 * h, rng));
    auto ct = T::from_data({2, h}, rand_vals(2 * h, rng));
    for (int step = 0; step < 5; ++step) {
        auto xt = T::from_data({2, e}, rand_vals(2 * e, rng, -3, 3));
        auto [h2, c2] = lstm_step(xt, ht, ct, w2);
        ht = h2;
        ct = c2;
        for (std::size_t i = 0; i < ht.size(); ++i) CHECK(std::abs(ht.data()[i]) <= 1.0);
    }
}

TEST_CASE("lstm full-sequence gradient, L=3") {
    Rng rng(15);
    std::size_t e = 3, hd = 4;
    ParamSet<double> ps;
    LstmWeights<double> w;
    w.wx = ps.add("wx", T::from_data({e, 4 * hd}, rand_vals(e * 4 * hd, rng, -0.5, 0.5)));
    w.wh = ps.add("wh", T::from_data({hd, 4 * hd}, rand_vals(hd * 4 * hd, rng, -0.5, 0.5)));
    w.b = ps.add("b", T::from_data({4 * hd}, rand_vals(4 * hd, rng, -0.2, 0.2)));
    auto& x0 = ps.add("x0", T::from_data({2, e}, rand_vals(2 * e, rng)));
    auto& x1 = ps.add("x1", T::from_data({2, e}, rand_vals(2 * e, rng)));
    auto& x2 = ps.add("x2", T::from_data({2, e}, rand_vals(2 * e, rng)));
    auto report = finite_diff_check(
        [&]() {
            T h = T::zeros({2, hd});
            T c = T::zeros({2, hd});
            for (const T* xt : {&x0, &x1, &x2}) {
                auto [h2, c2] = lstm_step(*xt, h, c, w);
                h = h2;
                c = c2;
            }
            return probe(h, 11);
        },
        ps);
    CHECK(report.max_rel_err() < 1e-3);
}

TEST_CASE("bce_loss frozen value and clamp floor") {
    auto p = T::from_data({1, 1}, {0.5});
    auto t = T::from_data({1, 1}, {1.0});
    CHECK(bce_loss(p, t).item() == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    // p == target exactly: loss bounded by the clamp-induced floor
    auto p2 = T::from_data({1, 2}, {1.0, 0.0});
    auto t2 = T::from_data({1, 2}, {1.0, 0.0});
    double floor = -2.0 * std::log(1.0 - 1e-7);
    CHECK(bce_loss(p2, t2).item() <= floor + 1e-12);

    auto bad = T::from_data({1, 1}, {std::nan("")});
    CHECK_THROWS_AS(bce_loss(bad, t), NumericError);
    CHECK_THROWS_AS(bce_loss(p, T::from_data({2, 1}, {1, 0})), DimensionError);
}

TEST_CASE("bce_loss gradient on 2x4 random probabilities") {
    Rng rng(16);
    ParamSet<double> ps;
    auto& logits = ps.add("logits", T::from_data({2, 4}, rand_vals(8, rng, -1.5, 1.5)));
    auto target = T::from_data({2, 4}, {1, 0, 0, 1, 0, 1, 0, 0});
    auto report = finite_diff_check([&]() { return bce_loss(sigmoid(logits), target); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("backward requires a scalar and is linear") {
    Rng rng(17);
    auto x = T::from_data({2, 3}, rand_vals(6, rng));
    x.set_requires_grad(true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);

    auto loss = sum_all(mul(x, x));
    x.zero_grad();
    backward(loss);
    auto g1 = x.grad();
    x.zero_grad();
    backward(scale(sum_all(mul(x, x)), 3.0));
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(3.0 * g1[i]).epsilon(1e-12));
}

TEST_CASE("unreachable parameters keep zero grads") {
    auto x = T::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    auto y = T::from_data({2}, {3, 4});
    y.set_requires_grad(true);
    x.zero_grad();
    y.zero_grad();
    backward(sum_all(x));
    CHECK(y.grad()[0] == 0.0);
    CHECK(y.grad()[1] == 0.0);
}

TEST_CASE("tape is topologically ordered and visits nodes once") {
    Rng rng(18);
    auto x = T::from_data({2, 2}, rand_vals(4, rng));
    x.set_requires_grad(true);
    auto a = mul(x, x);
    auto b = add(a, x);   // diamond: x feeds both a and b
    auto loss = sum_all(add(mul(a, b), b));
    auto tape = Tape<double>::build(loss);
    std::set<const Node<double>*> seen;
    for (const auto* n : tape.order()) {
        for (const auto& p : n->parents) CHECK(seen.count(p.get()) == 1);
        CHECK(seen.insert(n).second);  // exactly once
    }
}

TEST_CASE("broadcast add/mul against a hand case") {
    auto a = T::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = T::from_data({3}, {10, 20, 30});
    auto s = add(a, b);
    CHECK(s.data()[0] == 11.0);
    CHECK(s.data()[5] == 36.0);
    CHECK_THROWS_AS(add(a, T::from_data({2}, {1, 2})), DimensionError);

    Rng rng(19);
    ParamSet<double> ps;
    auto& pa = ps.add("a", T::from_data({2, 3, 4}, rand_vals(24, rng)));
    auto& pb = ps.add("b", T::from_data({3, 1}, rand_vals(3, rng, 0.5, 1.5)));
    auto report = finite_diff_check([&]() { return probe(mul(pa, pb), 12); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
}

TEST_CASE("conv2d gradient") {
    Rng rng(20);
    ParamSet<double> ps;
    auto& x = ps.add("x", T::from_data({1, 2, 6, 6}, rand_vals(72, rng)));
    auto& w = ps.add("w", T::from_data({3, 2, 3, 3}, rand_vals(54, rng, -0.5, 0.5)));
    auto& b = ps.add("b", T::from_data({3}, rand_vals(3, rng)));
    auto report = finite_diff_check([&]() { return probe(conv2d(x, w, b, 2, 1), 13); }, ps);
    CHECK(report.max_rel_err() < 1e-4);
    CHECK(conv2d(x, w, b, 2, 1).shape() == Shape{1, 3, 3, 3});
}

TEST_CASE("checkpoint round-trip preserves paths, shapes, values") {
    Rng rng(21);
    ParamSet<float> ps;
    ps.add("alpha.w", TF::from_data({2, 3}, {1.5f, -2.25f, 0.125f, 3.0f, -0.5f, 8.0f}));
    ps.add("beta", TF::from_data({4}, {1, 2, 3, 4}));
    std::string path = "test_ckpt_roundtrip.gft";
    ps.save(path);

    ParamSet<float> loaded;
    loaded.add("alpha.w", TF::zeros({2, 3}));
    loaded.add("beta", TF::zeros({4}));
    loaded.load(path);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(loaded.get("alpha.w").data()[i] == ps.get("alpha.w").data()[i]);
    for (std::size_t i = 0; i < 4; ++i) CHECK(loaded.get("beta").data()[i] == ps.get("beta").data()[i]);

    ParamSet<float> wrong;
    wrong.add("alpha.w", TF::zeros({3, 2}));
    wrong.add("beta", TF::zeros({4}));
    CHECK_THROWS_AS(wrong.load(path), ParseError);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint magic bytes") {
    ParamSet<float> ps;
    ps.add("w", TF::from_data({1}, {1.0f}));
    std::string path = "test_ckpt_magic.gft";
    ps.save(path);
    std::ifstream is(path, std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "GFT1");
    is.close();
    std::remove(path.c_str());
}

TEST_SUITE_END();
