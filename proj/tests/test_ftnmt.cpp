#include <catch2/catch_amalgamated.hpp>

#include "mantis/ftnmt.hpp"

using namespace mantis;

namespace {

Var vec2(double a, double b) {
    Tensor t(Shape{2});
    t[0] = a;
    t[1] = b;
    return make_var(t);
}

double tanimoto_scalar(const Var& p, const Var& l, double d, double smooth = 0.0) {
    return tanimoto_d(p, l, FTConfig{d, {0}, smooth})->value[0];
}

}  // namespace

TEST_CASE("self-similarity is exactly one at every depth") {
    Rng rng(1);
    Var p = make_var(rand_uniform({5}, rng, 0.05, 1.0));
    for (int d = 0; d <= 10; ++d) {
        double v = tanimoto_d(p, p, FTConfig{static_cast<double>(d), {0}, 1e-5})->value[0];
        REQUIRE(v == 1.0);
    }
}

TEST_CASE("hand-substituted values at d=0 and d=1") {
    Var p = vec2(1.0, 0.0);
    Var l = vec2(1.0, 1.0);
    REQUIRE(tanimoto_scalar(p, l, 0.0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(tanimoto_scalar(p, l, 1.0) == Catch::Approx(1.0 / 3.0).margin(1e-15));
    // cross-check against the recursive oracle
    Tensor pr(Shape{2}), lr(Shape{2});
    pr[0] = 1.0; pr[1] = 1e-9;  // oracle needs nonzero entries
    lr[0] = 1.0; lr[1] = 1.0;
    Tensor rec0 = tanimoto_recursive_oracle(pr, lr, {0}, 0);
    Tensor rec1 = tanimoto_recursive_oracle(pr, lr, {0}, 1);
    REQUIRE(rec0[0] == Catch::Approx(0.5).margin(1e-8));
    REQUIRE(rec1[0] == Catch::Approx(1.0 / 3.0).margin(1e-8));
}

TEST_CASE("disjoint supports give zero overlap") {
    Var p = vec2(1.0, 0.0);
    Var l = vec2(0.0, 1.0);
    REQUIRE(tanimoto_scalar(p, l, 0.0) == 0.0);
    for (int d = 0; d <= 6; ++d) {
        double v = tanimoto_d(p, l, FTConfig{static_cast<double>(d), {0}, 1e-5})->value[0];
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1e-4);  // smoothing correction only
    }
}

TEST_CASE("closed form equals the recursive oracle") {
    SECTION("base case d=0") {
        Rng rng(2);
        Tensor p = rand_uniform({8}, rng, 0.05, 1.0);
        Tensor l = rand_uniform({8}, rng, 0.05, 1.0);
        Tensor rec = tanimoto_recursive_oracle(p, l, {0}, 0);
        double closed = tanimoto_scalar(make_var(p), make_var(l), 0.0);
        REQUIRE(closed == Catch::Approx(rec[0]).margin(1e-14));
    }
    SECTION("d=2 on the worked pair") {
        Tensor p(Shape{2}), l(Shape{2});
        p[0] = 0.3; p[1] = 0.7;
        l[0] = 0.5; l[1] = 0.5;
        Tensor rec = tanimoto_recursive_oracle(p, l, {0}, 2);
        double closed = tanimoto_scalar(make_var(p), make_var(l), 2.0);
        REQUIRE(std::abs(closed - rec[0]) <= 1e-12);
    }
    SECTION("p = l is one at every depth") {
        Rng rng(3);
        Tensor p = rand_uniform({6}, rng, 0.1, 1.0);
        for (int d = 0; d <= 8; ++d) {
            Tensor rec = tanimoto_recursive_oracle(p, p, {0}, d);
            REQUIRE(rec[0] == Catch::Approx(1.0).margin(1e-12));
        }
    }
    SECTION("random pairs across depths, smoothing off") {
        Rng rng(4);
        for (int trial = 0; trial < 50; ++trial) {
            long long n = rng.uniform_int(2, 32);
            Tensor p = rand_uniform({n}, rng, 0.02, 1.0);
            Tensor l = rand_uniform({n}, rng, 0.02, 1.0);
            for (int d = 0; d <= 8; ++d) {
                Tensor rec = tanimoto_recursive_oracle(p, l, {0}, d);
                double closed = tanimoto_d(make_var(p), make_var(l),
                                           FTConfig{static_cast<double>(d), {0}, 0.0})->value[0];
                REQUIRE(std::abs(closed - rec[0]) <= 1e-10);
            }
        }
    }
    SECTION("oracle depth bound and degenerate input") {
        Tensor p(Shape{2}, 0.0), l(Shape{2}, 0.5);
        REQUIRE_THROWS_AS(tanimoto_recursive_oracle(p, l, {0}, 13), std::invalid_argument);
        REQUIRE_THROWS_AS(tanimoto_recursive_oracle(p, l, {0}, 2), std::domain_error);
    }
}

TEST_CASE("complemented form") {
    SECTION("p = l gives one") {
        Rng rng(5);
        Var p = make_var(rand_uniform({4}, rng, 0.1, 0.9));
        REQUIRE(ftnmt_complement(p, p, FTConfig{3.0, {0}, 1e-5})->value[0] ==
                Catch::Approx(1.0).margin(1e-12));
    }
    SECTION("hand value 0.25") {
        Var p = vec2(1.0, 0.0);
        Var l = vec2(1.0, 1.0);
        double v = ftnmt_complement(p, l, FTConfig{0.0, {0}, 0.0})->value[0];
        REQUIRE(v == Catch::Approx(0.25).margin(1e-15));
    }
    SECTION("binary total disagreement gives zero") {
        Var p = vec2(1.0, 0.0);
        Var l = vec2(0.0, 1.0);
        double v = ftnmt_complement(p, l, FTConfig{0.0, {0}, 0.0})->value[0];
        REQUIRE(v == 0.0);
    }
}

TEST_CASE("depth-averaged form") {
    Rng rng(6);
    SECTION("d=1 and d=0 both revert to the single depth-0 term") {
        Var p = make_var(rand_uniform({6}, rng, 0.0, 1.0));
        Var l = make_var(rand_uniform({6}, rng, 0.0, 1.0));
        double base = ftnmt_complement(p, l, FTConfig{0.0, {0}, 1e-5})->value[0];
        REQUIRE(ftnmt_avg(p, l, {0}, 1)->value[0] == Catch::Approx(base).margin(1e-14));
        REQUIRE(ftnmt_avg(p, l, {0}, 0)->value[0] == Catch::Approx(base).margin(1e-14));
    }
    SECTION("d=3 equals the term-by-term mean") {
        Var p = make_var(rand_uniform({6}, rng, 0.0, 1.0));
        Var l = make_var(rand_uniform({6}, rng, 0.0, 1.0));
        double expect = 0.0;
        for (int i = 0; i < 3; ++i)
            expect += ftnmt_complement(p, l, FTConfig{static_cast<double>(i), {0}, 1e-5})->value[0];
        expect /= 3.0;
        REQUIRE(ftnmt_avg(p, l, {0}, 3)->value[0] == Catch::Approx(expect).margin(1e-13));
    }
    SECTION("integer depth required only here: fractional depth works in tanimoto_d") {
        Var p = make_var(rand_uniform({6}, rng, 0.05, 1.0));
        Var l = make_var(rand_uniform({6}, rng, 0.05, 1.0));
        double t2 = tanimoto_scalar(p, l, 2.0, 1e-5);
        double t25 = tanimoto_scalar(p, l, 2.5, 1e-5);
        double t3 = tanimoto_scalar(p, l, 3.0, 1e-5);
        REQUIRE(t25 <= t2);
        REQUIRE(t3 <= t25);
        REQUIRE(t25 >= 0.0);
        REQUIRE(t25 <= 1.0);
        REQUIRE_THROWS_AS(ftnmt_avg(p, l, {0}, -1), std::invalid_argument);
    }
}

TEST_CASE("loss definition") {
    Rng rng(7);
    SECTION("perfect prediction gives zero") {
        Var t = make_var(rand_uniform({2, 3, 4, 4}, rng));
        REQUIRE(ftnmt_loss(t, t, 5)->value[0] == Catch::Approx(0.0).margin(1e-14));
    }
    SECTION("binary total disagreement saturates at one") {
        Tensor target(Shape{1, 1, 4, 4});
        for (long long i = 0; i < 16; ++i) target[i] = (i % 2 == 0) ? 1.0 : 0.0;
        Tensor pred = target;
        for (auto& v : pred.data) v = 1.0 - v;
        double loss = ftnmt_loss(make_var(pred), make_var(target), 0)->value[0];
        REQUIRE(loss > 0.999);
        REQUIRE(loss <= 1.0);
    }
    SECTION("cross-check against the similarity definition at d=10") {
        Var p = make_var(rand_uniform({2, 2, 4, 4}, rng));
        Var l = make_var(rand_uniform({2, 2, 4, 4}, rng));
        Var sim = ftnmt_avg(p, l, {1, 2, 3}, 10);
        double mean = sim->value.sum() / static_cast<double>(sim->value.size());
        REQUIRE(ftnmt_loss(p, l, 10)->value[0] == Catch::Approx(1.0 - mean).margin(1e-13));
    }
}

TEST_CASE("range, symmetry and depth monotonicity properties") {
    Rng rng(8);
    int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        long long n = rng.uniform_int(2, 8);
        Tensor p = rand_uniform({n}, rng);
        Tensor l = (t % 7 == 0) ? p : rand_uniform({n}, rng);
        Var pv = make_var(p), lv = make_var(l);
        double prev = 2.0;
        for (int d = 0; d <= 10; ++d) {
            FTConfig cfg{static_cast<double>(d), {0}, 1e-5};
            double v = tanimoto_d(pv, lv, cfg)->value[0];
            double vs = tanimoto_d(lv, pv, cfg)->value[0];
            REQUIRE(v == vs);  // exact symmetry
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
            REQUIRE(v <= prev + 1e-15);  // nonincreasing in depth
            prev = v;
            if (d <= 3) {
                double c = ftnmt_complement(pv, lv, cfg)->value[0];
                double a = ftnmt_avg(pv, lv, {0}, d)->value[0];
                REQUIRE(c >= 0.0);
                REQUIRE(c <= 1.0);
                REQUIRE(a >= 0.0);
                REQUIRE(a <= 1.0);
            }
        }
        bool same = true;
        for (long long i = 0; i < n; ++i) same = same && p[i] == l[i];
        double v10 = tanimoto_d(pv, lv, FTConfig{10.0, {0}, 1e-5})->value[0];
        if (same) {
            REQUIRE(v10 == 1.0);
        } else {
            REQUIRE(v10 < 1.0);
        }
    }
}

TEST_CASE("shape and range validation") {
    Rng rng(9);
    Var p = make_var(rand_uniform({4}, rng));
    Var l = make_var(rand_uniform({5}, rng));
    REQUIRE_THROWS_AS(tanimoto_d(p, l, FTConfig{0.0, {0}, 1e-5}), std::invalid_argument);
    REQUIRE_THROWS_AS(tanimoto_d(p, p, FTConfig{0.0, {}, 1e-5}), std::invalid_argument);
    REQUIRE_THROWS_AS(tanimoto_d(p, p, FTConfig{-1.0, {0}, 1e-5}), std::invalid_argument);
#ifndef NDEBUG
    Tensor bad(Shape{3}, 1.5);
    REQUIRE_THROWS_AS(tanimoto_d(make_var(bad), make_var(bad), FTConfig{0.0, {0}, 1e-5}),
                      std::domain_error);
#endif
}
