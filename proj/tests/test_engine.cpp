#include "hieremb/engine.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "hieremb/errors.hpp"

using namespace hieremb;

namespace {

void fill_random(Tensor& t, Rng& rng, double bound = 1.0) {
    for (double& x : t.v) x = rng.uniform(-bound, bound);
}

}  // namespace

TEST_CASE("gather_rows") {
    Parameter table = Parameter::make("t", {3, 3});
    for (std::size_t i = 0; i < 3; ++i) table.value.at(i, i) = 1.0;  // identity

    SUBCASE("selects the requested row") {
        Graph g;
        auto out = g.gather_rows(table, {1});
        CHECK(g.value(out).at(0, 0) == 0.0);
        CHECK(g.value(out).at(0, 1) == 1.0);
    }

    SUBCASE("duplicate ids accumulate gradient") {
        Graph g;
        auto out = g.gather_rows(table, {2, 2});
        auto loss = g.sum(out);
        g.backward(loss);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(table.grad.at(2, j) == 2.0);
            CHECK(table.grad.at(0, j) == 0.0);
        }
    }

    SUBCASE("matches a per-element gather on random input") {
        Rng rng(1);
        Parameter big = Parameter::make("b", {20, 7});
        fill_random(big.value, rng);
        std::vector<std::int32_t> ids;
        for (int i = 0; i < 15; ++i) ids.push_back(static_cast<std::int32_t>(rng.below(20)));
        Graph g;
        auto out = g.gather_rows(big, ids);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < 7; ++j)
                CHECK(g.value(out).at(i, j) == big.value.at(static_cast<std::size_t>(ids[i]), j));
    }

    SUBCASE("id out of range") {
        Graph g;
        CHECK_THROWS_AS(g.gather_rows(table, {3}), std::invalid_argument);
    }
}

TEST_CASE("affine") {
    SUBCASE("identity input returns the weights") {
        Parameter w = Parameter::make("w", {2, 3});
        Parameter b = Parameter::make("b", {3});
        Rng rng(2);
        fill_random(w.value, rng);
        Tensor x = Tensor::zeros({2, 2});
        x.at(0, 0) = x.at(1, 1) = 1.0;
        Graph g;
        auto out = g.affine(g.leaf(x), w, b);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(g.value(out).at(i, j) == w.value.at(i, j));
    }

    SUBCASE("1x1 case: 2*3 + 1 = 7") {
        Parameter w = Parameter::make("w", {1, 1});
        Parameter b = Parameter::make("b", {1});
        w.value.v[0] = 3.0;
        b.value.v[0] = 1.0;
        Tensor x = Tensor::zeros({1, 1});
        x.v[0] = 2.0;
        Graph g;
        auto out = g.affine(g.leaf(x), w, b);
        CHECK(g.value(out).v[0] == 7.0);
    }

    SUBCASE("random 4x5 * 5x3 matches the naive triple loop") {
        Rng rng(3);
        Parameter w = Parameter::make("w", {5, 3});
        Parameter b = Parameter::make("b", {3});
        fill_random(w.value, rng);
        fill_random(b.value, rng);
        Tensor x = Tensor::zeros({4, 5});
        fill_random(x, rng);

        Graph g;
        auto out = g.affine(g.leaf(x), w, b);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                double expected = b.value.v[j];
                for (std::size_t k = 0; k < 5; ++k) expected += x.at(i, k) * w.value.at(k, j);
                CHECK(g.value(out).at(i, j) == doctest::Approx(expected).epsilon(1e-12));
            }
        }
    }

    SUBCASE("shape mismatch") {
        Parameter w = Parameter::make("w", {5, 3});
        Parameter b = Parameter::make("b", {3});
        Graph g;
        auto x = g.leaf(Tensor::zeros({2, 4}));
        CHECK_THROWS_AS(g.affine(x, w, b), std::invalid_argument);
    }
}

TEST_CASE("lstm_step") {
    SUBCASE("zero weights and state give zero output") {
        LstmParams p = LstmParams::make("l", 3, 4);
        Graph g;
        auto x = g.leaf(Tensor::zeros({2, 3}));
        auto h = g.leaf(Tensor::zeros({2, 4}));
        auto c = g.leaf(Tensor::zeros({2, 4}));
        auto [h2, c2] = g.lstm_step(x, h, c, p);
        for (double e : g.value(h2).v) CHECK(e == 0.0);
        for (double e : g.value(c2).v) CHECK(e == 0.0);
    }

    SUBCASE("saturated forget gate with closed input gate preserves the cell") {
        LstmParams p = LstmParams::make("l", 2, 3);
        for (std::size_t j = 0; j < 3; ++j) {
            p.b.value.v[j] = -40.0;      // input gate -> 0
            p.b.value.v[3 + j] = 40.0;   // forget gate -> 1
        }
        Tensor cell = Tensor::zeros({1, 3});
        cell.v = {0.3, -0.7, 1.1};
        Graph g;
        auto x = g.leaf(Tensor::zeros({1, 2}));
        auto h = g.leaf(Tensor::zeros({1, 3}));
        auto c = g.leaf(cell);
        auto [h2, c2] = g.lstm_step(x, h, c, p);
        for (std::size_t j = 0; j < 3; ++j) CHECK(g.value(c2).v[j] == cell.v[j]);
    }

    SUBCASE("gradient matches finite differences") {
        Rng rng(4);
        LstmParams p = LstmParams::make("l", 3, 4);
        p.w.init_fan_in(rng, 7);
        p.b.init_uniform(rng, 0.2);
        Tensor x = Tensor::zeros({2, 3});
        Tensor h0 = Tensor::zeros({2, 4});
        Tensor c0 = Tensor::zeros({2, 4});
        fill_random(x, rng);
        fill_random(h0, rng, 0.5);
        fill_random(c0, rng, 0.5);

        auto run = [&](bool with_grad) {
            Graph g(with_grad);
            auto xv = g.leaf(x);
            auto hv = g.leaf(h0);
            auto cv = g.leaf(c0);
            auto [h2, c2] = g.lstm_step(xv, hv, cv, p);
            auto both = g.add(g.sum(h2), g.sum(c2));
            if (with_grad) g.backward(both);
            return g.value(both).v[0];
        };
        std::vector<Parameter*> params{&p.w, &p.b};
        auto report = finite_difference_check(params, [&] { return run(false); },
                                              [&] { return run(true); });
        CHECK(report.checked == p.w.value.size() + p.b.value.size());
        CHECK(report.max_rel_err < 1e-6);
    }
}

TEST_CASE("lstm_sequence is equivalent to composed lstm_step") {
    Rng rng(5);
    const std::size_t in = 3, hidden = 4, steps = 5;
    LstmParams p = LstmParams::make("l", in, hidden);
    p.w.init_fan_in(rng, in + hidden);
    p.b.init_uniform(rng, 0.3);
    Tensor xs = Tensor::zeros({steps, in});
    fill_random(xs, rng);

    // fused
    zero_grads(std::vector<Parameter*>{&p.w, &p.b});
    Graph gf;
    auto xs_var = gf.leaf(xs);
    auto hs = gf.lstm_sequence(xs_var, p);
    gf.backward(gf.sum(hs));
    Tensor fused_out = gf.value(hs);
    Tensor fused_gw = p.w.grad;
    Tensor fused_gb = p.b.grad;

    // step by step
    zero_grads(std::vector<Parameter*>{&p.w, &p.b});
    Graph gs;
    std::vector<Graph::Var> outs;
    auto h = gs.leaf(Tensor::zeros({1, hidden}));
    auto c = gs.leaf(Tensor::zeros({1, hidden}));
    for (std::size_t t = 0; t < steps; ++t) {
        Tensor row = Tensor::zeros({1, in});
        std::copy_n(xs.row_ptr(t), in, row.v.begin());
        auto [h2, c2] = gs.lstm_step(gs.leaf(row), h, c, p);
        h = h2;
        c = c2;
        outs.push_back(h2);
    }
    auto total = gs.sum(outs[0]);
    for (std::size_t t = 1; t < steps; ++t) total = gs.add(total, gs.sum(outs[t]));
    gs.backward(total);

    for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < hidden; ++j)
            CHECK(fused_out.at(t, j) == doctest::Approx(gs.value(outs[t]).v[j]).epsilon(1e-12));
    for (std::size_t i = 0; i < p.w.grad.size(); ++i)
        CHECK(fused_gw.v[i] == doctest::Approx(p.w.grad.v[i]).epsilon(1e-10));
    for (std::size_t i = 0; i < p.b.grad.size(); ++i)
        CHECK(fused_gb.v[i] == doctest::Approx(p.b.grad.v[i]).epsilon(1e-10));
}

TEST_CASE("softmax cross entropy") {
    SUBCASE("uniform logits over 4 classes") {
        Graph g;
        auto logits = g.leaf(Tensor::zeros({1, 4}));
        auto loss = g.softmax_xent_sum(logits, {2});
        CHECK(g.value(loss).v[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }

    SUBCASE("saturated one-hot logit") {
        Tensor t = Tensor::zeros({1, 5});
        t.v[3] = 1000.0;
        Graph g;
        auto loss = g.softmax_xent_sum(g.leaf(t), {3});
        CHECK(g.value(loss).v[0] == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(std::isfinite(g.value(loss).v[0]));
    }

    SUBCASE("matches the direct formula on random logits") {
        Rng rng(6);
        for (int round = 0; round < 20; ++round) {
            Tensor t = Tensor::zeros({1, 10});
            fill_random(t, rng, 5.0);
            auto target = static_cast<std::size_t>(rng.below(10));
            Graph g;
            auto loss = g.softmax_xent_sum(g.leaf(t), {static_cast<std::int32_t>(target)});

            double denom = 0.0;
            for (double x : t.v) denom += std::exp(x);
            double direct = -std::log(std::exp(t.v[target]) / denom);
            CHECK(g.value(loss).v[0] == doctest::Approx(direct).epsilon(1e-12));
            CHECK(g.value(loss).v[0] >= 0.0);
        }
    }

    SUBCASE("target out of range") {
        Graph g;
        auto logits = g.leaf(Tensor::zeros({1, 4}));
        CHECK_THROWS_AS(g.softmax_xent_sum(logits, {4}), std::invalid_argument);
    }

    SUBCASE("softmax sums to one even with extreme shifts") {
        Rng rng(7);
        for (int round = 0; round < 20; ++round) {
            std::vector<double> logits(16);
            double shift = rng.uniform(-500.0, 500.0);
            for (double& x : logits) x = rng.uniform(-3.0, 3.0) + shift;
            auto p = softmax(logits);
            double total = 0.0;
            for (double q : p) {
                CHECK(q >= 0.0);
                total += q;
            }
            CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Parameter p = Parameter::make("p", {4});
        p.value.v = {1.0, -2.0, 3.0, 0.5};
        Tensor before = p.value;
        std::vector<Parameter*> params{&p};
        adam_step(params, {});
        CHECK(p.value.v == before.v);
        CHECK(p.step_count == 1);
    }

    SUBCASE("constant gradient approaches an lr-sized signed step") {
        Parameter p = Parameter::make("p", {1});
        AdamConfig cfg;
        cfg.lr = 0.01;
        std::vector<Parameter*> params{&p};
        double prev = p.value.v[0];
        double delta = 0.0;
        for (int i = 0; i < 2000; ++i) {
            p.grad.v[0] = 1.0;
            adam_step(params, cfg);
            delta = prev - p.value.v[0];
            prev = p.value.v[0];
        }
        CHECK(std::abs(delta - cfg.lr) < 1e-4 * cfg.lr);
    }

    SUBCASE("two steps match the hand-computed recurrence") {
        Parameter p = Parameter::make("p", {1});
        p.value.v[0] = 1.0;
        AdamConfig cfg;
        cfg.lr = 0.1;
        std::vector<Parameter*> params{&p};

        double theta = 1.0, m = 0.0, v = 0.0;
        const double grads[2] = {0.5, -0.25};
        for (int t = 1; t <= 2; ++t) {
            p.grad.v[0] = grads[t - 1];
            adam_step(params, cfg);

            m = cfg.beta1 * m + (1 - cfg.beta1) * grads[t - 1];
            v = cfg.beta2 * v + (1 - cfg.beta2) * grads[t - 1] * grads[t - 1];
            double mh = m / (1 - std::pow(cfg.beta1, t));
            double vh = v / (1 - std::pow(cfg.beta2, t));
            theta -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
            CHECK(p.value.v[0] == doctest::Approx(theta).epsilon(1e-14));
        }
    }

    SUBCASE("non-finite gradient aborts") {
        Parameter p = Parameter::make("p", {1});
        p.grad.v[0] = std::numeric_limits<double>::quiet_NaN();
        std::vector<Parameter*> params{&p};
        CHECK_THROWS_AS(adam_step(params, {}), DivergenceError);
    }

    SUBCASE("deterministic given identical state") {
        auto run = [] {
            Rng rng(8);
            Parameter p = Parameter::make("p", {16});
            p.value.v.assign(16, 0.5);
            std::vector<Parameter*> params{&p};
            for (int i = 0; i < 50; ++i) {
                for (double& g : p.grad.v) g = rng.uniform(-1.0, 1.0);
                clip_global_norm(params, 1.0);
                adam_step(params, {});
            }
            return p.value.v;
        };
        CHECK(run() == run());
    }
}

TEST_CASE("clip_global_norm") {
    SUBCASE("below threshold is identity") {
        Parameter p = Parameter::make("p", {3});
        p.grad.v = {0.1, 0.2, 0.2};
        std::vector<Parameter*> params{&p};
        CHECK(clip_global_norm(params, 5.0) == 1.0);
        CHECK(p.grad.v[2] == 0.2);
    }

    SUBCASE("single gradient of norm 10 against max 5") {
        Parameter p = Parameter::make("p", {1});
        p.grad.v = {10.0};
        std::vector<Parameter*> params{&p};
        CHECK(clip_global_norm(params, 5.0) == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(p.grad.v[0] == doctest::Approx(5.0).epsilon(1e-15));
    }

    SUBCASE("post-clip norm is bounded") {
        Rng rng(9);
        Parameter a = Parameter::make("a", {40});
        Parameter b = Parameter::make("b", {25});
        for (double& g : a.grad.v) g = rng.uniform(-3.0, 3.0);
        for (double& g : b.grad.v) g = rng.uniform(-3.0, 3.0);
        std::vector<Parameter*> params{&a, &b};
        clip_global_norm(params, 2.0);
        double sq = 0.0;
        for (double g : a.grad.v) sq += g * g;
        for (double g : b.grad.v) sq += g * g;
        CHECK(std::sqrt(sq) <= 2.0 + 1e-9);
    }
}

TEST_CASE("finite difference harness") {
    SUBCASE("affine fragment") {
        Rng rng(10);
        Parameter w = Parameter::make("w", {3, 2});
        Parameter b = Parameter::make("b", {2});
        w.init_fan_in(rng, 3);
        b.init_uniform(rng, 0.1);
        Tensor x = Tensor::zeros({4, 3});
        fill_random(x, rng);

        auto run = [&](bool with_grad) {
            Graph g(with_grad);
            auto out = g.affine(g.leaf(x), w, b);
            auto loss = g.softmax_xent_sum(out, {0, 1, 0, 1});
            if (with_grad) g.backward(loss);
            return g.value(loss).v[0];
        };
        std::vector<Parameter*> params{&w, &b};
        auto report = finite_difference_check(params, [&] { return run(false); },
                                              [&] { return run(true); });
        CHECK(report.max_rel_err < 1e-6);
        CHECK(report.checked == 8);
    }

    SUBCASE("no parameters gives an empty report") {
        auto report = finite_difference_check({}, [] { return 0.0; }, [] { return 0.0; });
        CHECK(report.empty());
        CHECK(report.max_rel_err == 0.0);
    }
}
