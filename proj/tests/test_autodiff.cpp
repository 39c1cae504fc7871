#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sesim/autodiff.hpp"
#include "support/gradcheck.hpp"

using namespace sesim;
using sesim::testsupport::max_grad_rel_err;

namespace {

Matrix random_matrix(int r, int c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (size_t i = 0; i < m.size(); ++i)
        m.data()[i] = scale * rng.next_range(-1.0, 1.0);
    return m;
}

}  // namespace

TEST_CASE("relu forward and subgradient") {
    ad::Tape t;
    Matrix in(1, 2);
    in(0, 0) = -1.0;
    in(0, 1) = 2.0;
    ad::Tensor x = t.input(in, true);
    ad::Tensor y = t.relu(x);
    CHECK(y.value()(0, 0) == 0.0);
    CHECK(y.value()(0, 1) == 2.0);
    t.backward(t.sum_all(y));
    CHECK(x.grad()(0, 0) == 0.0);
    CHECK(x.grad()(0, 1) == 1.0);
}

TEST_CASE("abs subgradient is zero at zero") {
    ad::Tape t;
    Matrix in(1, 3);
    in(0, 0) = -2.0;
    in(0, 1) = 0.0;
    in(0, 2) = 3.0;
    ad::Tensor x = t.input(in, true);
    t.backward(t.sum_all(t.abs(x)));
    CHECK(x.grad()(0, 0) == -1.0);
    CHECK(x.grad()(0, 1) == 0.0);
    CHECK(x.grad()(0, 2) == 1.0);
}

TEST_CASE("softmax of equal logits is uniform") {
    ad::Tape t;
    ad::Tensor y = t.softmax_rows(t.constant(Matrix(1, 2, 0.0)));
    CHECK(y.value()(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(y.value()(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("matmul gradient vs central differences") {
    Rng rng(17);
    Matrix a = random_matrix(5, 4, rng);
    Matrix b = random_matrix(4, 3, rng);
    Matrix weight = random_matrix(5, 3, rng);  // fixed projection to a scalar

    auto loss = [&]() {
        ad::Tape t;
        ad::Tensor prod = t.matmul(t.input(a, false), t.input(b, false));
        return t.sum_all(t.mul(prod, t.constant(weight))).value()(0, 0);
    };

    ad::Tape t;
    ad::Tensor at = t.input(a, true);
    ad::Tensor bt = t.input(b, true);
    t.backward(t.sum_all(t.mul(t.matmul(at, bt), t.constant(weight))));
    CHECK(max_grad_rel_err(a, at.grad(), loss) < 1e-6);
    CHECK(max_grad_rel_err(b, bt.grad(), loss) < 1e-6);
}

TEST_CASE("backward closed forms") {
    Rng rng(23);
    Matrix xv = random_matrix(3, 4, rng);

    SUBCASE("sum gradient is all ones") {
        ad::Tape t;
        ad::Tensor x = t.input(xv, true);
        t.backward(t.sum_all(x));
        for (size_t i = 0; i < xv.size(); ++i) CHECK(x.grad().data()[i] == 1.0);
    }
    SUBCASE("grad of sum(x*x)/2 is x") {
        ad::Tape t;
        ad::Tensor x = t.input(xv, true);
        t.backward(t.scale(t.sum_all(t.mul(x, x)), 0.5));
        CHECK(max_abs_diff(x.grad(), xv) < 1e-15);
    }
}

TEST_CASE("loss closed forms") {
    ad::Tape t;
    SUBCASE("bce at p=0.5, y=1 is ln 2") {
        ad::Tensor l = t.bce(t.constant(Matrix(1, 1, 0.5)), {1.0});
        CHECK(l.value()(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("cross entropy of uniform logits over 4 classes is ln 4") {
        ad::Tensor l = t.cross_entropy(t.constant(Matrix(1, 4, 0.3)), {2});
        CHECK(l.value()(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("mse of equal vectors is zero") {
        Matrix p(2, 1);
        p(0, 0) = 1.0;
        p(1, 0) = 2.0;
        CHECK(t.mse(t.constant(p), {1.0, 2.0}).value()(0, 0) == 0.0);
    }
    SUBCASE("empty batches are rejected") {
        CHECK_THROWS_AS(t.bce(t.constant(Matrix(0, 1)), {}), ArgumentError);
        CHECK_THROWS_AS(t.cross_entropy(t.constant(Matrix(0, 3)), {}), ArgumentError);
        CHECK_THROWS_AS(t.mse(t.constant(Matrix(0, 1)), {}), ArgumentError);
    }
}

TEST_CASE("loss gradients vs central differences") {
    Rng rng(29);
    SUBCASE("bce") {
        Matrix p(6, 1);
        for (int i = 0; i < 6; ++i) p(i, 0) = rng.next_range(0.05, 0.95);
        std::vector<double> y = {1, 0, 1, 1, 0, 0};
        auto loss = [&]() {
            ad::Tape t;
            return t.bce(t.input(p, false), y).value()(0, 0);
        };
        ad::Tape t;
        ad::Tensor pt = t.input(p, true);
        t.backward(t.bce(pt, y));
        CHECK(max_grad_rel_err(p, pt.grad(), loss) < 1e-6);
    }
    SUBCASE("cross entropy") {
        Matrix logits = random_matrix(5, 3, rng);
        std::vector<int> y = {0, 2, 1, 1, 0};
        auto loss = [&]() {
            ad::Tape t;
            return t.cross_entropy(t.input(logits, false), y).value()(0, 0);
        };
        ad::Tape t;
        ad::Tensor lt = t.input(logits, true);
        t.backward(t.cross_entropy(lt, y));
        CHECK(max_grad_rel_err(logits, lt.grad(), loss) < 1e-6);
    }
    SUBCASE("mse") {
        Matrix p = random_matrix(4, 1, rng);
        std::vector<double> y = {0.5, -0.25, 1.5, 0.0};
        auto loss = [&]() {
            ad::Tape t;
            return t.mse(t.input(p, false), y).value()(0, 0);
        };
        ad::Tape t;
        ad::Tensor pt = t.input(p, true);
        t.backward(t.mse(pt, y));
        CHECK(max_grad_rel_err(p, pt.grad(), loss) < 1e-6);
    }
}

TEST_CASE("composite ops gradient check: gather, concat, broadcast add, sigmoid") {
    Rng rng(37);
    Matrix x = random_matrix(6, 3, rng);
    Matrix bias = random_matrix(1, 3, rng);
    const std::vector<int> idx = {4, 0, 2, 2};

    auto loss = [&]() {
        ad::Tape t;
        ad::Tensor g = t.gather_rows(t.input(x, false), idx);
        ad::Tensor c = t.concat_rows({g, g});
        ad::Tensor s = t.sigmoid(t.add(c, t.input(bias, false)));
        return t.mean_all(s).value()(0, 0);
    };
    ad::Tape t;
    ad::Tensor xt = t.input(x, true);
    ad::Tensor bt = t.input(bias, true);
    ad::Tensor g = t.gather_rows(xt, idx);
    ad::Tensor c = t.concat_rows({g, g});
    t.backward(t.mean_all(t.sigmoid(t.add(c, bt))));
    CHECK(max_grad_rel_err(x, xt.grad(), loss) < 1e-6);
    CHECK(max_grad_rel_err(bias, bt.grad(), loss) < 1e-6);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(43);
    Matrix xv = random_matrix(4, 4, rng);
    const double a = 0.7, b = -1.3;

    enum class Which { kFirst, kSecond, kCombined };
    auto grads_of = [&](Which which) {
        ad::Tape t;
        ad::Tensor x = t.input(xv, true);
        ad::Tensor l1 = t.mean_all(t.mul(x, x));
        ad::Tensor l2 = t.sum_all(t.sigmoid(x));
        ad::Tensor target = which == Which::kFirst    ? l1
                            : which == Which::kSecond ? l2
                                : t.add(t.scale(l1, a), t.scale(l2, b));
        t.backward(target);
        return x.grad();
    };
    Matrix g1 = grads_of(Which::kFirst);
    Matrix g2 = grads_of(Which::kSecond);
    Matrix gc = grads_of(Which::kCombined);
    for (size_t i = 0; i < xv.size(); ++i)
        CHECK(std::fabs(gc.data()[i] - (a * g1.data()[i] + b * g2.data()[i])) < 1e-12);
}

TEST_CASE("determinism: identical seeds give bit-identical runs") {
    auto run = [](uint64_t seed) {
        Rng rng(seed);
        Matrix x = random_matrix(8, 5, rng);
        Matrix w = random_matrix(5, 4, rng);
        ad::Tape t;
        ad::Tensor xt = t.input(x, false);
        ad::Tensor wt = t.input(w, true);
        ad::Tensor l = t.mean_all(t.relu(t.matmul(xt, wt)));
        t.backward(l);
        return std::pair{l.value()(0, 0), wt.grad()};
    };
    auto [l1, g1] = run(99);
    auto [l2, g2] = run(99);
    CHECK(l1 == l2);
    CHECK(max_abs_diff(g1, g2) == 0.0);
}

TEST_CASE("error paths") {
    ad::Tape t;
    ad::Tensor a = t.input(Matrix(2, 3, 1.0), true);
    ad::Tensor b = t.input(Matrix(2, 2, 1.0), false);
    CHECK_THROWS_AS(t.add(a, b), ArgumentError);
    CHECK_THROWS_AS(t.matmul(a, a), ArgumentError);
    CHECK_THROWS_AS(t.backward(a), ArgumentError);  // not 1x1

    ad::Tensor loss = t.mean_all(a);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), StateError);
    t.reset_backward();
    CHECK_NOTHROW(t.backward(loss));

    ad::Tape other;
    ad::Tensor foreign = other.input(Matrix(2, 3, 1.0), false);
    CHECK_THROWS_AS(t.add(a, foreign), ArgumentError);

    Matrix inf(1, 1, std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(t.input(inf, false), NumericError);
}
