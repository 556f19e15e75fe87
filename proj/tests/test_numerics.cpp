#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tclp/gradcheck.hpp"
#include "tclp/graph.hpp"
#include "tclp/optim.hpp"
#include "tclp/parallel.hpp"
#include "tclp/rng.hpp"
#include "tclp/tensor.hpp"
#include "test_util.hpp"

using namespace tclp;
using tclp::test::check_op;
using tclp::test::random_tensor;
using tclp::test::random_tensor_away_from;

TEST_CASE("tensor shape invariants") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({0}, {}), ShapeError);
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    t.ensure_grad();
    CHECK(t.grad.size() == t.data.size());
}

TEST_CASE("relu and l2 normalize forward") {
    Graph g;
    auto x = g.input(Tensor({3}, {-1.0f, 0.0f, 2.0f}));
    // relu wants 2-d for none of its checks; 1-d is fine
    auto y = g.relu(x);
    CHECK(g.val(y).data == std::vector<float>{0.0f, 0.0f, 2.0f});

    auto v = g.input(Tensor({1, 2}, {3.0f, 4.0f}));
    auto n = g.l2_normalize_rows(v);
    CHECK(g.val(n).data[0] == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(g.val(n).data[1] == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("l2 normalize: unit norms for nonzero rows, zero rows warn") {
    Rng rng(11);
    Graph g;
    auto x = g.input(random_tensor<float>({8, 5}, rng, 0.2, 1.0));
    auto y = g.l2_normalize_rows(x);
    for (int i = 0; i < 8; ++i) {
        double ss = 0;
        for (int j = 0; j < 5; ++j) ss += double(g.val(y).at(i, j)) * g.val(y).at(i, j);
        CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-5));
    }
    CHECK(g.zero_norm_warnings() == 0);

    auto z = g.l2_normalize_rows(g.input(Tensor::zeros({2, 4})));
    for (float v : g.val(z).data) CHECK(v == 0.0f);
    CHECK(g.zero_norm_warnings() == 2);
}

TEST_CASE("backward: sum of squares and log-exp identity") {
    Graph g;
    Tensor x({3}, {1.0f, 2.0f, 3.0f});
    x.requires_grad = true;
    auto xn = g.param(x);
    auto loss = g.sum_all(g.mul(xn, xn));
    g.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(2.0));
    CHECK(x.grad[1] == doctest::Approx(4.0));
    CHECK(x.grad[2] == doctest::Approx(6.0));

    Graph g2;
    Tensor w({4}, {-1.5f, 0.3f, 2.0f, 7.0f});
    w.requires_grad = true;
    auto wn = g2.param(w);
    auto l2 = g2.sum_all(g2.log_(g2.exp_(wn)));
    g2.backward(l2);
    for (float gv : w.grad) CHECK(gv == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("backward rejects non-scalar loss") {
    Graph g;
    auto x = g.input(Tensor::zeros({2, 2}));
    CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("diamond reuse accumulates both paths") {
    Graph g;
    Tensor x({1}, {0.7f});
    x.requires_grad = true;
    auto xn = g.param(x);
    auto loss = g.sum_all(g.add(g.mul(xn, xn), g.exp_(xn)));
    g.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(2.0 * 0.7 + std::exp(0.7)).epsilon(1e-5));
}

TEST_CASE("matmul backward of sum(W x) equals outer(1, x)") {
    Rng rng(3);
    TensorT<double> w = random_tensor<double>({3, 4}, rng);
    TensorT<double> x = random_tensor<double>({4, 1}, rng);
    w.requires_grad = true;
    w.ensure_grad();
    GraphT<double> g;
    auto loss = g.sum_all(g.matmul(g.param(w), g.input(x)));
    g.backward(loss);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(w.grad[i * 4 + j] == doctest::Approx(x.data[j]).epsilon(1e-9));

    // and the same thing under the finite-difference oracle, h = 1e-3
    auto run = [&](bool with_grad) -> double {
        GraphT<double> gg;
        auto l = gg.sum_all(gg.matmul(gg.param(w), gg.input(x)));
        if (with_grad) gg.backward(l);
        return gg.val(l).data[0];
    };
    auto report = grad_check<double>(run, {{"w", &w}}, 1e-3, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("gradcheck self test: x squared at 2") {
    TensorT<double> x({1}, {2.0});
    auto run = [&](bool with_grad) -> double {
        GraphT<double> g;
        auto xn = g.param(x);
        auto loss = g.sum_all(g.mul(xn, xn));
        if (with_grad) g.backward(loss);
        return g.val(loss).data[0];
    };
    auto report = grad_check<double>(run, {{"x", &x}}, 1e-3, 1e-5);
    CHECK(report.pass);
    CHECK(report.checked == 1);
    CHECK(report.worst_autodiff == doctest::Approx(4.0));
}

// Per-op gradient agreement with central differences, both precisions.
// f32: h = 1e-3, tol 1e-2. f64: h = 1e-5, tol 1e-5.
template <typename T>
void run_op_suite(T h, double tol) {
    Rng rng(1234);

    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        TensorT<T> b = random_tensor<T>({4, 5}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.matmul(g.param(a), g.param(b)); },
                             {{"a", &a}, {"b", &b}}, 1, h, tol);
        INFO("matmul worst ", r.max_rel_err);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        TensorT<T> b = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.add(g.param(a), g.param(b)); },
                             {{"a", &a}, {"b", &b}}, 2, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        TensorT<T> bias = random_tensor<T>({4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.add(g.param(a), g.param(bias)); },
                             {{"a", &a}, {"bias", &bias}}, 3, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        TensorT<T> b = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.mul(g.param(a), g.param(b)); },
                             {{"a", &a}, {"b", &b}}, 4, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor_away_from<T>({3, 4}, rng, 0.15);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.relu(g.param(a)); }, {{"a", &a}}, 5, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.tanh_(g.param(a)); }, {{"a", &a}}, 6, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.exp_(g.param(a)); }, {{"a", &a}}, 7, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng, 0.5, 2.0);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.log_(g.param(a)); }, {{"a", &a}}, 8, h, tol);
        CHECK(r.pass);
    }
    for (int axis : {0, 1}) {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.sum_axis(g.param(a), axis); }, {{"a", &a}},
                             uint64_t(9 + axis), h, tol);
        CHECK(r.pass);
        TensorT<T> b = random_tensor<T>({3, 4}, rng);
        auto r2 = check_op<T>([&](GraphT<T>& g) { return g.mean_axis(g.param(b), axis); }, {{"b", &b}},
                              uint64_t(11 + axis), h, tol);
        CHECK(r2.pass);
    }
    {
        TensorT<T> a = random_tensor_away_from<T>({4, 5}, rng, 0.2);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.l2_normalize_rows(g.param(a)); }, {{"a", &a}}, 13,
                             h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.scale(g.param(a), T(0.37)); }, {{"a", &a}}, 14, h,
                             tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        TensorT<T> s = random_tensor<T>({1}, rng, 0.5, 1.5);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.scale_by(g.param(a), g.param(s)); },
                             {{"a", &a}, {"s", &s}}, 15, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({2, 4}, rng);
        TensorT<T> b = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.concat_rows(g.param(a), g.param(b)); },
                             {{"a", &a}, {"b", &b}}, 16, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> a = random_tensor<T>({3, 4}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.transpose(g.param(a)); }, {{"a", &a}}, 17, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> logits = random_tensor<T>({4, 6}, rng, -2.0, 2.0);
        std::vector<int> targets{1, 0, 5, 2};
        auto run = [&](bool with_grad) -> T {
            GraphT<T> g;
            auto loss = g.softmax_xent(g.param(logits), targets);
            if (with_grad) g.backward(loss);
            return g.val(loss).data[0];
        };
        auto r = grad_check<T>(run, {{"logits", &logits}}, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> table = random_tensor<T>({6, 3}, rng);
        std::vector<int> ids{0, 5, 2, 2, 1};
        auto r = check_op<T>([&](GraphT<T>& g) { return g.gather_rows(g.param(table), ids); },
                             {{"table", &table}}, 18, h, tol);
        CHECK(r.pass);
    }
    {
        TensorT<T> x = random_tensor<T>({4, 6}, rng);
        TensorT<T> gain = random_tensor<T>({6}, rng, 0.5, 1.5);
        TensorT<T> bias = random_tensor<T>({6}, rng);
        auto r = check_op<T>(
            [&](GraphT<T>& g) { return g.layer_norm_rows(g.param(x), g.param(gain), g.param(bias)); },
            {{"x", &x}, {"gain", &gain}, {"bias", &bias}}, 19, h, tol);
        CHECK(r.pass);
    }
    {
        int batch = 2, seq = 4, dim = 6, heads = 2;
        std::vector<int> lengths{4, 3};
        TensorT<T> q = random_tensor<T>({batch * seq, dim}, rng);
        TensorT<T> k = random_tensor<T>({batch * seq, dim}, rng);
        TensorT<T> v = random_tensor<T>({batch * seq, dim}, rng);
        auto r = check_op<T>(
            [&](GraphT<T>& g) {
                return g.attention(g.param(q), g.param(k), g.param(v), lengths, batch, seq, heads);
            },
            {{"q", &q}, {"k", &k}, {"v", &v}}, 20, h, tol);
        INFO("attention worst ", r.max_rel_err);
        CHECK(r.pass);
    }
    {
        int batch = 3, seq = 4, dim = 5;
        std::vector<int> lengths{4, 2, 3};
        TensorT<T> x = random_tensor<T>({batch * seq, dim}, rng);
        auto r = check_op<T>([&](GraphT<T>& g) { return g.masked_mean_rows(g.param(x), lengths, batch, seq); },
                             {{"x", &x}}, 21, h, tol);
        CHECK(r.pass);
    }
}

TEST_CASE("op gradients vs finite differences, f32") { run_op_suite<float>(1e-3f, 1e-2); }
TEST_CASE("op gradients vs finite differences, f64 verification mode") { run_op_suite<double>(1e-5, 1e-5); }

TEST_CASE("two layer mlp gradient check in both precisions") {
    auto build = [](auto& g, auto& w1, auto& b1, auto& w2, auto& x) {
        auto h = g.tanh_(g.add(g.matmul(g.param(x), g.param(w1)), g.param(b1)));
        return g.mean_all(g.matmul(h, g.param(w2)));
    };
    {
        Rng rng(77);
        TensorT<float> w1 = random_tensor<float>({4, 8}, rng), b1 = random_tensor<float>({8}, rng);
        TensorT<float> w2 = random_tensor<float>({8, 1}, rng), x = random_tensor<float>({3, 4}, rng);
        auto run = [&](bool wg) -> float {
            GraphT<float> g;
            auto loss = build(g, w1, b1, w2, x);
            if (wg) g.backward(loss);
            return g.val(loss).data[0];
        };
        auto r = grad_check<float>(run, {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"x", &x}}, 1e-3f, 1e-2);
        CHECK(r.pass);
    }
    {
        Rng rng(77);
        TensorT<double> w1 = random_tensor<double>({4, 8}, rng), b1 = random_tensor<double>({8}, rng);
        TensorT<double> w2 = random_tensor<double>({8, 1}, rng), x = random_tensor<double>({3, 4}, rng);
        auto run = [&](bool wg) -> double {
            GraphT<double> g;
            auto loss = build(g, w1, b1, w2, x);
            if (wg) g.backward(loss);
            return g.val(loss).data[0];
        };
        auto r = grad_check<double>(run, {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"x", &x}}, 1e-5, 1e-5);
        CHECK(r.pass);
    }
}

TEST_CASE("softmax cross entropy: nonnegative, log K at uniform") {
    Graph g;
    auto logits = g.input(Tensor({2, 5}, std::vector<float>(10, 0.42f)));
    auto loss = g.softmax_xent(logits, {0, 3});
    CHECK(g.val(loss).data[0] == doctest::Approx(std::log(5.0)).epsilon(1e-6));

    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Graph gg;
        auto l = gg.input(random_tensor<float>({3, 4}, rng, -3.0, 3.0));
        auto v = gg.softmax_xent(l, {trial % 4, 0, 3});
        CHECK(gg.val(v).data[0] >= 0.0f);
    }
}

TEST_CASE("shape errors name the op and shapes") {
    Graph g;
    auto a = g.input(Tensor::zeros({2, 3}));
    auto b = g.input(Tensor::zeros({4, 5}));
    CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_WITH_AS(g.add(a, b), doctest::Contains("[2,3]"), ShapeError);
    CHECK_THROWS_AS(g.gather_rows(a, {0, 2}), ShapeError);
    CHECK_THROWS_AS(g.softmax_xent(a, {0}), ShapeError);
    CHECK_THROWS_AS(g.softmax_xent(a, {0, 7}), ShapeError);
}

TEST_CASE("adamw single step matches hand evaluation") {
    AdamWT<double> opt(0.9, 0.999, 1e-8, 0.0);
    TensorT<double> theta({1}, {1.0});
    theta.requires_grad = true;
    theta.ensure_grad();
    theta.grad[0] = 1.0;
    opt.step({{"theta", &theta}}, 0.1);
    CHECK(theta.data[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw: zero gradient and zero decay is a fixed point") {
    AdamWT<float> opt(0.9, 0.999, 1e-8, 0.0);
    Tensor theta({3}, {0.5f, -1.0f, 2.0f});
    theta.requires_grad = true;
    theta.ensure_grad();
    for (int s = 0; s < 5; ++s) opt.step({{"theta", &theta}}, 0.1);
    CHECK(theta.data[0] == 0.5f);
    CHECK(theta.data[1] == -1.0f);
    CHECK(theta.data[2] == 2.0f);
}

TEST_CASE("adamw: pure decoupled decay scales parameters") {
    AdamWT<double> opt(0.9, 0.999, 1e-8, 0.5);
    TensorT<double> theta({2}, {1.0, -4.0});
    theta.requires_grad = true;
    theta.ensure_grad();
    opt.step({{"theta", &theta}}, 0.1);
    CHECK(theta.data[0] == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(theta.data[1] == doctest::Approx(-3.8).epsilon(1e-12));
}

TEST_CASE("adamw: nan gradient aborts naming the group") {
    AdamWT<float> opt;
    Tensor theta({2}, {1.0f, 2.0f});
    theta.requires_grad = true;
    theta.ensure_grad();
    theta.grad[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(opt.step({{"txt.proj.w", &theta}}, 0.1), doctest::Contains("txt.proj.w"),
                         NumericError);
}

TEST_CASE("cosine schedule boundaries and shape") {
    CosineSchedule s{1e-3, 0.0, 1000, 0};
    s.validate();
    CHECK(s.lr_at(0) == doctest::Approx(1e-3));
    CHECK(s.lr_at(1000) == doctest::Approx(0.0));
    CHECK(s.lr_at(500) == doctest::Approx(0.5e-3).epsilon(1e-9));
    CHECK(s.lr_at(2000) == doctest::Approx(0.0));

    CosineSchedule w{1e-3, 1e-5, 1000, 100};
    w.validate();
    CHECK(w.lr_at(0) == doctest::Approx(0.0));
    CHECK(w.lr_at(100) == doctest::Approx(1e-3));
    // continuity at the warmup boundary: ramp limit equals cosine start
    CHECK(w.lr_at(99) == doctest::Approx(1e-3 * 99.0 / 100.0));
    double prev = w.lr_at(100);
    for (int64_t step = 101; step <= 1000; ++step) {
        double cur = w.lr_at(step);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
    CHECK(w.lr_at(1000) == doctest::Approx(1e-5));

    CHECK_THROWS_AS((CosineSchedule{1e-3, 0.0, 0, 0}).validate(), ConfigError);
    CHECK_THROWS_AS((CosineSchedule{1e-3, 2e-3, 10, 0}).validate(), ConfigError);
}

TEST_CASE("parallel kernels are bitwise deterministic across thread caps") {
    Rng rng(99);
    TensorT<float> a = random_tensor<float>({33, 47}, rng);
    TensorT<float> b = random_tensor<float>({47, 29}, rng);
    int saved = thread_cap();
    set_thread_cap(1);
    Graph g1;
    auto c1 = g1.matmul(g1.input(a), g1.input(b));
    set_thread_cap(3);
    Graph g3;
    auto c3 = g3.matmul(g3.input(a), g3.input(b));
    set_thread_cap(saved);
    CHECK(g1.val(c1).data == g3.val(c3).data);
}
