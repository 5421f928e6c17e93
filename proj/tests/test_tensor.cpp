#include <doctest.h>

#include <cmath>
#include <vector>

#include "hylo/tensor.hpp"

using namespace hylo;

namespace {

Tensor random_tensor(int r, int c, Rng& rng, double scale = 1.0) {
    return Tensor::randn(r, c, rng, scale);
}

}  // namespace

TEST_CASE("matmul identity and hand-expanded product") {
    Tape tp;
    Rng rng(7);
    Tensor m = random_tensor(3, 3, rng);
    Tensor id(3, 3);
    for (int i = 0; i < 3; ++i) id.at(i, i) = 1.0;
    Var out = tp.matmul(tp.constant(id), tp.constant(m));
    Tensor v = out.value();
    for (int i = 0; i < 9; ++i) CHECK(v.data[i] == m.data[i]);

    Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor b = Tensor::from_rows({{0}, {1}});
    Tensor c = tp.matmul(tp.constant(a), tp.constant(b)).value();
    CHECK(c.rows == 2);
    CHECK(c.cols == 1);
    CHECK(c.data[0] == 2.0);
    CHECK(c.data[1] == 4.0);

    Tensor z(2, 5);
    Tensor az = tp.matmul(tp.constant(a), tp.constant(Tensor::zeros(2, 5))).value();
    for (double x : az.data) CHECK(x == 0.0);
}

TEST_CASE("matmul shape error names both shapes") {
    Tape tp;
    Var a = tp.constant(Tensor::zeros(2, 3));
    Var b = tp.constant(Tensor::zeros(4, 1));
    CHECK_THROWS_WITH_AS(tp.matmul(a, b), "matmul: 2x3 x 4x1", shape_error);
}

TEST_CASE("softmax rows: symmetry, shift stability, closed form") {
    Tape tp;
    Tensor s = Tensor::from_rows({{0, 0, 0}});
    Tensor p = tp.softmax_rows(tp.constant(s)).value();
    for (double x : p.data) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));

    Tensor big = Tensor::from_rows({{1000, 1000}});
    Tensor pb = tp.softmax_rows(tp.constant(big)).value();
    CHECK(pb.data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(pb.data[1] == doctest::Approx(0.5).epsilon(1e-15));

    Tensor lf = Tensor::from_rows({{0.0, std::log(3.0)}});
    Tensor pl = tp.softmax_rows(tp.constant(lf)).value();
    CHECK(pl.data[0] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(pl.data[1] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        Tape tp;
        Tensor s = random_tensor(4, 6, rng, 3.0);
        Tensor p = tp.softmax_rows(tp.constant(s)).value();
        for (int i = 0; i < 4; ++i) {
            double row_sum = 0.0;
            for (int j = 0; j < 6; ++j) row_sum += p.at(i, j);
            CHECK(std::abs(row_sum - 1.0) <= 1e-12);
        }
        double c = rng.normal() * 10.0;
        Tensor shifted = s;
        for (auto& v : shifted.data) v += c;
        Tensor p2 = tp.softmax_rows(tp.constant(shifted)).value();
        for (int i = 0; i < p.size(); ++i) CHECK(std::abs(p.data[i] - p2.data[i]) <= 1e-12);
    }
}

TEST_CASE("cosine: self similarity, orthogonality, direct value, scale invariance") {
    Tape tp;
    Rng rng(5);
    Tensor a = random_tensor(8, 1, rng);
    CHECK(tp.cosine(tp.constant(a), tp.constant(a)).scalar() == doctest::Approx(1.0).epsilon(1e-12));

    CHECK(tp.cosine(tp.constant(Tensor::vec({1, 0})), tp.constant(Tensor::vec({0, 1}))).scalar() == 0.0);

    double c = tp.cosine(tp.constant(Tensor::vec({1, 1})), tp.constant(Tensor::vec({1, 0}))).scalar();
    CHECK(c == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));

    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor(5, 1, rng);
        Tensor y = random_tensor(5, 1, rng);
        double lam = std::abs(rng.normal()) + 0.1;
        Tensor xs = x;
        for (auto& v : xs.data) v *= lam;
        double c1 = tp.cosine(tp.constant(x), tp.constant(y)).scalar();
        double c2 = tp.cosine(tp.constant(xs), tp.constant(y)).scalar();
        CHECK(std::abs(c1 - c2) <= 1e-9);
    }

    CHECK_THROWS_AS(tp.cosine(tp.constant(Tensor::vec({1, 2})), tp.constant(Tensor::vec({1, 2, 3}))), shape_error);
}

TEST_CASE("mean rows examples") {
    Tape tp;
    Tensor same = Tensor::from_rows({{2, -1, 0.5}, {2, -1, 0.5}, {2, -1, 0.5}});
    Tensor m = tp.mean_rows(tp.constant(same)).value();
    CHECK(m.data[0] == 2.0);
    CHECK(m.data[1] == -1.0);
    CHECK(m.data[2] == 0.5);

    Tensor sym = Tensor::from_rows({{0, 2}, {2, 0}});
    Tensor ms = tp.mean_rows(tp.constant(sym)).value();
    CHECK(ms.data[0] == 1.0);
    CHECK(ms.data[1] == 1.0);

    Tensor three = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
    Tensor mt = tp.mean_rows(tp.constant(three)).value();
    CHECK(mt.data[0] == 3.0);
    CHECK(mt.data[1] == 4.0);

    CHECK_THROWS_AS(tp.mean_rows(tp.constant(Tensor::zeros(0, 3))), empty_error);
}

TEST_CASE("concat examples and length property") {
    Tape tp;
    Tensor b = Tensor::vec({4, 5});
    Tensor empty(0, 1);
    Tensor r = tp.concat(tp.constant(empty), tp.constant(b)).value();
    CHECK(r.rows == 2);
    CHECK(r.data[0] == 4.0);

    Tensor c = tp.concat(tp.constant(Tensor::vec({1})), tp.constant(Tensor::vec({2, 3}))).value();
    CHECK(c.rows == 3);
    CHECK(c.data[0] == 1.0);
    CHECK(c.data[1] == 2.0);
    CHECK(c.data[2] == 3.0);

    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        int p = rng.uniform_int(6);
        int q = rng.uniform_int(6);
        Tensor x = random_tensor(p, 1, rng);
        Tensor y = random_tensor(q, 1, rng);
        Var out = tp.concat(tp.constant(x), tp.constant(y));
        CHECK(out.rows == p + q);
    }
}

TEST_CASE("backward: quadratic, constant, scalar contract") {
    Tensor x = Tensor::vec({1, 2});
    x.requires_grad = true;
    Tape tp;
    Var vx = tp.param(x);
    Var loss = tp.sum(tp.mul(vx, vx));
    tp.backward(loss);
    CHECK(x.grad[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x.grad[1] == doctest::Approx(4.0).epsilon(1e-14));

    // loss independent of a parameter -> zero grad
    Tensor y = Tensor::vec({3});
    y.requires_grad = true;
    Tape tp2;
    Var vy = tp2.param(y);
    (void)vy;
    Tensor z = Tensor::vec({1});
    z.requires_grad = true;
    Var vz = tp2.param(z);
    Var l2 = tp2.sum(tp2.mul(vz, vz));
    tp2.backward(l2);
    CHECK(y.grad.size() == 1);
    CHECK(y.grad[0] == 0.0);

    Tape tp3;
    Var vec_loss = tp3.constant(Tensor::vec({1, 2}));
    CHECK_THROWS_AS(tp3.backward(vec_loss), contract_error);
}

TEST_CASE("backward on a frozen leaf never allocates a gradient") {
    Tensor frozen = Tensor::vec({1, 2, 3});
    frozen.requires_grad = false;
    Tensor live = Tensor::vec({1, 2, 3});
    live.requires_grad = true;
    Tape tp;
    Var f = tp.param(frozen);
    Var l = tp.param(live);
    Var loss = tp.sum(tp.mul(f, l));
    tp.backward(loss);
    CHECK(frozen.grad.empty());
    CHECK(live.grad.size() == 3);
    // the frozen tensor is not among the bound tensors either
    for (const Tensor* t : tp.bound_tensors()) CHECK(t != &frozen);
}

TEST_CASE("tape stays topologically ordered") {
    Tensor x = Tensor::vec({0.3, -0.2});
    x.requires_grad = true;
    Tape tp;
    Var vx = tp.param(x);
    Var h = tp.tanh(tp.affine(vx, 2.0, 0.1));
    Var loss = tp.sum(tp.mul(h, h));
    tp.backward(loss);
    auto edges = tp.edges();
    for (size_t i = 0; i < edges.size(); ++i)
        for (int in : edges[i]) CHECK(in < static_cast<int>(i));
}

namespace {

// Builds a composite objective from every differentiable op and returns the
// loss; backward fills the grads of the supplied parameters.
double composite_objective(Tensor& w, Tensor& x, Tensor& b, Tensor& e) {
    Tape tp;
    Var vw = tp.param(w);
    Var vx = tp.param(x);
    Var vb = tp.param(b);
    Var ve = tp.param(e);

    Var m = tp.matmul(vw, vx);                       // 3x2
    Var mt = tp.transpose(m);                        // 2x3
    Var sm = tp.softmax_rows(mt);                    // 2x3
    Var mr = tp.mean_rows(sm);                       // 3x1
    Var row = tp.select_row(sm, 1);                  // 3x1
    Var cat = tp.concat(mr, row);                    // 6x1
    Var th = tp.tanh(tp.affine(cat, 1.5, -0.1));     // 6x1
    std::vector<Var> rows = {th, tp.mul(th, th)};
    Var stacked = tp.stack_rows(rows);               // 2x6
    Var pre = tp.prepend_row(stacked, tp.reshape(tp.sub(vb, tp.affine(vb, 2.0, 0.0)), 6, 1));
    Var flat = tp.reshape(pre, 18, 1);
    Var cs = tp.cosine(flat, ve);
    Var nrm = tp.frob_norm(pre);
    Var loss = tp.add(tp.mul(cs, cs), tp.affine(nrm, 0.25, 0.0));
    tp.backward(loss);
    return loss.scalar();
}

}  // namespace

TEST_CASE("composite of all ops matches finite differences") {
    Rng rng(11);
    for (int seed = 0; seed < 20; ++seed) {
        Rng r(1000 + seed);
        Tensor w = Tensor::randn(3, 4, r, 0.7);
        Tensor x = Tensor::randn(4, 2, r, 0.7);
        Tensor b = Tensor::randn(6, 1, r, 0.7);
        Tensor e = Tensor::randn(18, 1, r, 0.7);
        w.requires_grad = x.requires_grad = b.requires_grad = e.requires_grad = true;
        std::vector<Tensor*> params = {&w, &x, &b, &e};
        double err = grad_check([&] { return composite_objective(w, x, b, e); }, params, 1e-5);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check on x^2 is nearly exact") {
    Tensor x = Tensor::vec({1.7});
    x.requires_grad = true;
    std::vector<Tensor*> params = {&x};
    auto f = [&] {
        Tape tp;
        Var vx = tp.param(x);
        Var loss = tp.mul(vx, vx);
        tp.backward(loss);
        return loss.scalar();
    };
    CHECK(grad_check(f, params, 1e-5) < 1e-6);
}

TEST_CASE("grad_check detects a corrupted gradient rule") {
    Tensor a = Tensor::vec({0.4, -0.9, 0.2});
    Tensor b = Tensor::vec({1.1, 0.3, -0.5});
    a.requires_grad = true;
    std::vector<Tensor*> params = {&a};
    auto f = [&] {
        Tape tp;
        tp.inject_gradient_fault(1.25);
        Var loss = tp.cosine(tp.param(a), tp.constant(b));
        tp.backward(loss);
        return loss.scalar();
    };
    CHECK(grad_check(f, params, 1e-5) > 1e-3);
}

TEST_CASE("ce loss gradient through softmax equals probs minus target") {
    Rng rng(42);
    Tensor logits = Tensor::randn(5, 1, rng, 1.2);
    logits.requires_grad = true;
    Tensor target(5, 1);
    target.data = {0.1, 0.0, 0.6, 0.2, 0.1};
    Tape tp;
    Var vl = tp.param(logits);
    Var probs = tp.transpose(tp.softmax_rows(tp.transpose(vl)));
    Var loss = tp.ce_loss(probs, target);
    tp.backward(loss);
    Tensor p = probs.value();
    for (int i = 0; i < 5; ++i) CHECK(std::abs(logits.grad[i] - (p.data[i] - target.data[i])) <= 1e-9);
}

TEST_CASE("ce loss examples and contract") {
    Tape tp;
    Tensor t_hot(3, 1);
    t_hot.data = {0, 1, 0};
    Tensor near(3, 1);
    near.data = {1e-9, 1.0 - 2e-9, 1e-9};
    CHECK(tp.ce_loss(tp.constant(near), t_hot).scalar() == doctest::Approx(0.0).epsilon(1e-8));

    Tensor uni(4, 1);
    uni.data = {0.25, 0.25, 0.25, 0.25};
    CHECK(tp.ce_loss(tp.constant(uni), uni).scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor bad(4, 1);
    bad.data = {0.3, 0.3, 0.3, 0.3};
    CHECK_THROWS_AS(tp.ce_loss(tp.constant(uni), bad), contract_error);
}

TEST_CASE("per-op gradients pass the checker over 20 seeds") {
    for (int seed = 0; seed < 20; ++seed) {
        Rng r(500 + seed);
        Tensor a = Tensor::randn(3, 4, r, 0.8);
        Tensor b = Tensor::randn(3, 4, r, 0.8);
        Tensor v = Tensor::randn(4, 1, r, 0.8);
        a.requires_grad = b.requires_grad = v.requires_grad = true;

        auto check1 = [&](auto&& build) {
            std::vector<Tensor*> params = {&a, &b, &v};
            auto f = [&] {
                Tape tp;
                Var loss = build(tp, tp.param(a), tp.param(b), tp.param(v));
                tp.backward(loss);
                return loss.scalar();
            };
            CHECK(grad_check(f, params, 1e-5) < 1e-4);
        };

        check1([](Tape& tp, Var x, Var y, Var w) { return tp.sum(tp.matmul(x, tp.reshape(w, 4, 1))); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.frob_norm(tp.add(x, y)); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.sum(tp.mul(x, y)); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.sum(tp.mul(tp.softmax_rows(x), y)); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.sum(tp.mean_rows(tp.mul(x, y))); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.cosine(tp.reshape(x, 12, 1), tp.reshape(y, 12, 1)); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.sum(tp.tanh(tp.transpose(x))); });
        check1([](Tape& tp, Var x, Var y, Var w) { return tp.frob_norm(tp.prepend_row(x, w)); });
        check1([](Tape& tp, Var x, Var y, Var w) {
            return tp.sum(tp.concat(tp.select_row(x, 2), tp.affine(w, -0.5, 0.2)));
        });
    }
}
