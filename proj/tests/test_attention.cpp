#include <catch2/catch_amalgamated.hpp>

#include "mantis/attention.hpp"

using namespace mantis;

namespace {

// scalar-loop <FT>^d with complement, independent of the graph path
double ftavg_scalar(const std::vector<double>& p, const std::vector<double>& l, int depth,
                    double smooth) {
    auto t = [&](const std::vector<double>& a, const std::vector<double>& b, int d) {
        double pl = 0, pp = 0, ll = 0;
        for (size_t i = 0; i < a.size(); ++i) {
            pl += a[i] * b[i];
            pp += a[i] * a[i];
            ll += b[i] * b[i];
        }
        double aa = std::pow(2.0, d);
        double bb = -(2.0 * aa - 1.0);
        return (pl + smooth) / (aa * (pp + ll) + bb * pl + smooth);
    };
    std::vector<double> pc(p.size()), lc(l.size());
    for (size_t i = 0; i < p.size(); ++i) {
        pc[i] = 1.0 - p[i];
        lc[i] = 1.0 - l[i];
    }
    int terms = std::max(depth, 1);
    double acc = 0.0;
    for (int i = 0; i < terms; ++i) acc += 0.5 * (t(p, l, i) + t(pc, lc, i));
    return acc / terms;
}

void copy_params(const ParamRefs& refs, const std::string& from_prefix,
                 const std::string& to_prefix) {
    for (const auto& [name, p] : refs) {
        if (name.rfind(from_prefix, 0) != 0) continue;
        std::string target = to_prefix + name.substr(from_prefix.size());
        for (const auto& [name2, p2] : refs)
            if (name2 == target) p2->value() = p->value();
    }
}

}  // namespace

TEST_CASE("similarity shapes honor the memory contract") {
    Rng rng(1);
    Var q = make_var(rand_uniform({2, 6, 5, 7}, rng));
    Var k = make_var(rand_uniform({2, 6, 5, 7}, rng));
    REQUIRE(spatial_similarity(q, k, 5.0)->value.shape == Shape{2, 6, 1, 1});
    REQUIRE(channel_similarity(q, k, 5.0)->value.shape == Shape{2, 1, 5, 7});
}

TEST_CASE("similarities on identical and disjoint inputs") {
    Rng rng(2);
    Var q = make_var(rand_uniform({1, 4, 4, 4}, rng, 0.1, 1.0));
    Var s = spatial_similarity(q, q, 5.0);
    Var c = channel_similarity(q, q, 3.0);
    for (long long i = 0; i < s->value.size(); ++i) REQUIRE(s->value[i] == 1.0);
    for (long long i = 0; i < c->value.size(); ++i) REQUIRE(c->value[i] == 1.0);

    Tensor a(Shape{1, 2, 2, 2}, 0.0), b(Shape{1, 2, 2, 2}, 0.0);
    a.at4(0, 0, 0, 0) = 1.0;  // disjoint spatial support
    b.at4(0, 0, 1, 1) = 1.0;
    Var sd = spatial_similarity(make_var(a), make_var(b), 0.0);
    REQUIRE(sd->value[0] < 1e-4);
}

TEST_CASE("similarities equal tanimoto_d on the matching axis set") {
    Rng rng(3);
    Var q = make_var(rand_uniform({2, 3, 4, 4}, rng));
    Var k = make_var(rand_uniform({2, 3, 4, 4}, rng));
    Var s = spatial_similarity(q, k, 5.0);
    Var s_ref = tanimoto_d(q, k, FTConfig{5.0, {2, 3}, 1e-5});
    Var c = channel_similarity(q, k, 5.0);
    Var c_ref = tanimoto_d(q, k, FTConfig{5.0, {1}, 1e-5});
    for (long long i = 0; i < s->value.size(); ++i) REQUIRE(s->value[i] == s_ref->value[i]);
    for (long long i = 0; i < c->value.size(); ++i) REQUIRE(c->value[i] == c_ref->value[i]);
}

TEST_CASE("attention with tied q/k projections passes the value through") {
    Rng rng(4);
    FracTALAttention att(4, 2, 5, rng);
    ParamRefs refs;
    att.params(refs, "att");
    copy_params(refs, "att.q", "att.k");  // projected q == projected k
    Var x = make_var(randn({1, 4, 6, 6}, rng, 0.0, 0.5));
    Var v_in = make_var(randn({1, 4, 6, 6}, rng, 0.0, 0.5));
    Var pre = att.forward_pre_norm(x, x, v_in);
    Var v_proj = sigmoid(att.v_proj().forward(v_in));
    REQUIRE(shapes_equal(pre->value.shape, v_proj->value.shape));
    for (long long i = 0; i < pre->value.size(); ++i)
        REQUIRE(pre->value[i] == Catch::Approx(v_proj->value[i]).margin(1e-12));
}

TEST_CASE("attention output matches the scalar-loop oracle") {
    Rng rng(5);
    FracTALAttention att(4, 1, 5, rng);
    Var q_in = make_var(randn({2, 4, 5, 5}, rng, 0.0, 0.7));
    Var k_in = make_var(randn({2, 4, 5, 5}, rng, 0.0, 0.7));
    Var v_in = make_var(randn({2, 4, 5, 5}, rng, 0.0, 0.7));
    Tensor q = sigmoid(att.q_proj().forward(q_in))->value;
    Tensor k = sigmoid(att.k_proj().forward(k_in))->value;
    Tensor v = sigmoid(att.v_proj().forward(v_in))->value;
    long long B = 2, C = 4, H = 5, W = 5;

    Tensor expected(Shape{B, C, H, W});
    for (long long b = 0; b < B; ++b) {
        // spatial similarity per channel
        std::vector<double> sim_spat(static_cast<size_t>(C));
        for (long long c = 0; c < C; ++c) {
            std::vector<double> qp, kp;
            for (long long i = 0; i < H * W; ++i) {
                qp.push_back(q.at4(b, c, i / W, i % W));
                kp.push_back(k.at4(b, c, i / W, i % W));
            }
            sim_spat[static_cast<size_t>(c)] = ftavg_scalar(qp, kp, 5, 1e-5);
        }
        // channel similarity per pixel
        for (long long y = 0; y < H; ++y)
            for (long long x = 0; x < W; ++x) {
                std::vector<double> qp, kp;
                for (long long c = 0; c < C; ++c) {
                    qp.push_back(q.at4(b, c, y, x));
                    kp.push_back(k.at4(b, c, y, x));
                }
                double sim_chan = ftavg_scalar(qp, kp, 5, 1e-5);
                for (long long c = 0; c < C; ++c)
                    expected.at4(b, c, y, x) =
                        0.5 * (sim_spat[static_cast<size_t>(c)] * v.at4(b, c, y, x) +
                               sim_chan * v.at4(b, c, y, x));
            }
    }
    Var pre = att.forward_pre_norm(q_in, k_in, v_in);
    for (long long i = 0; i < expected.size(); ++i)
        REQUIRE(pre->value[i] == Catch::Approx(expected[i]).margin(1e-8));

    // bounded by max |projected v| since both similarity maps lie in [0,1]
    double vmax = 0.0;
    for (long long i = 0; i < v.size(); ++i) vmax = std::max(vmax, std::abs(v[i]));
    for (long long i = 0; i < pre->value.size(); ++i) REQUIRE(std::abs(pre->value[i]) <= vmax + 1e-12);
}

TEST_CASE("attention validates channel count") {
    Rng rng(6);
    FracTALAttention att(4, 1, 5, rng);
    Var bad = make_var(rand_uniform({1, 3, 4, 4}, rng));
    REQUIRE_THROWS_AS(att.forward(bad, bad, bad), std::invalid_argument);
    REQUIRE_THROWS_AS(FracTALAttention(6, 4, 5, rng), std::invalid_argument);
}

TEST_CASE("self fusion") {
    Rng rng(7);
    Var L = make_var(randn({1, 3, 4, 4}, rng));
    Var A = make_var(rand_uniform({1, 3, 4, 4}, rng));
    SECTION("gamma at zero is the identity") {
        Var F = self_fusion(L, A, scalar_const(0.0));
        for (long long i = 0; i < F->value.size(); ++i) REQUIRE(F->value[i] == L->value[i]);
    }
    SECTION("gamma=1 with all-ones attention doubles the layer") {
        Var ones = make_var(Tensor(Shape{1, 3, 4, 4}, 1.0));
        Var F = self_fusion(L, ones, scalar_const(1.0));
        for (long long i = 0; i < F->value.size(); ++i)
            REQUIRE(F->value[i] == Catch::Approx(2.0 * L->value[i]).margin(1e-15));
    }
    SECTION("elementwise oracle") {
        double g = 0.37;
        Var F = self_fusion(L, A, scalar_const(g));
        for (long long i = 0; i < F->value.size(); ++i)
            REQUIRE(F->value[i] ==
                    Catch::Approx(L->value[i] * (1.0 + g * A->value[i])).margin(1e-15));
    }
    SECTION("shape mismatch rejected") {
        Var B = make_var(rand_uniform({1, 3, 4, 5}, rng));
        REQUIRE_THROWS_AS(self_fusion(L, B, scalar_const(0.0)), std::invalid_argument);
    }
}

TEST_CASE("relative fusion") {
    Rng rng(8);
    RelativeFusion fusion(4, 1, 5, rng);
    Var L1 = make_var(randn({1, 4, 6, 6}, rng, 0.0, 0.5));
    Var L2 = make_var(randn({1, 4, 6, 6}, rng, 0.0, 0.5));

    SECTION("zero-initialized gammas reduce to plain concat+conv") {
        Var out = fusion.forward(L1, L2);
        Var plain = fusion.fuse().forward(concat({L1, L2}, 1));
        REQUIRE(shapes_equal(out->value.shape, L1->value.shape));
        for (long long i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == plain->value[i]);

        fusion.attention_enabled = false;
        Var ablated = fusion.forward(L1, L2);
        for (long long i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == ablated->value[i]);
        fusion.attention_enabled = true;
    }
    SECTION("duplicated input with zero gammas") {
        Var out = fusion.forward(L1, L1);
        Var plain = fusion.fuse().forward(concat({L1, L1}, 1));
        for (long long i = 0; i < out->value.size(); ++i) REQUIRE(out->value[i] == plain->value[i]);
    }
    SECTION("nonzero gammas match the equation-by-equation composition") {
        fusion.gamma1().value()[0] = 0.31;
        fusion.gamma2().value()[0] = -0.17;
        Var f1 = self_fusion(L1, fusion.att12().forward(L1, L2, L2), fusion.gamma1().var());
        Var f2 = self_fusion(L2, fusion.att21().forward(L2, L1, L1), fusion.gamma2().var());
        Var expected = fusion.fuse().forward(concat({f1, f2}, 1));
        Var out = fusion.forward(L1, L2);
        for (long long i = 0; i < out->value.size(); ++i)
            REQUIRE(out->value[i] == Catch::Approx(expected->value[i]).margin(1e-12));
    }
    SECTION("shape mismatch rejected") {
        Var bad = make_var(randn({1, 4, 6, 5}, rng));
        REQUIRE_THROWS_AS(fusion.forward(L1, bad), std::invalid_argument);
    }
}

TEST_CASE("gradients flow through gamma at its zero init") {
    Rng rng(9);
    RelativeFusion fusion(4, 1, 3, rng);
    Var L1 = make_var(randn({1, 4, 4, 4}, rng, 0.0, 0.5));
    Var L2 = make_var(randn({1, 4, 4, 4}, rng, 0.0, 0.5));
    fusion.gamma1().zero_grad();
    fusion.gamma2().zero_grad();
    Var loss = mean_all(mul(fusion.forward(L1, L2), fusion.forward(L1, L2)));
    backward(loss);
    REQUIRE(fusion.gamma1().grad()[0] != 0.0);
    REQUIRE(fusion.gamma2().grad()[0] != 0.0);
}
