#include <catch2/catch_amalgamated.hpp>

#include "mantis/gradcheck_suite.hpp"
#include "mantis/mantis.hpp"

using namespace mantis;

namespace {

// brute-force grouped convolution, nested loops
Tensor conv_oracle(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
    long long B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    long long Cout = w.dim(0);
    int k = static_cast<int>(w.dim(2));
    long long Ho = (H + 2 * pad - k) / stride + 1, Wo = (W + 2 * pad - k) / stride + 1;
    long long cg_in = Cin / groups, cg_out = Cout / groups;
    Tensor y(Shape{B, Cout, Ho, Wo}, 0.0);
    for (long long b = 0; b < B; ++b)
        for (long long co = 0; co < Cout; ++co) {
            long long g = co / cg_out;
            for (long long oy = 0; oy < Ho; ++oy)
                for (long long ox = 0; ox < Wo; ++ox) {
                    double acc = 0.0;
                    for (long long ci = 0; ci < cg_in; ++ci)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                long long iy = oy * stride - pad + ky;
                                long long ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at4(b, g * cg_in + ci, iy, ix) *
                                       w.at4(co, ci, ky, kx);
                            }
                    y.at4(b, co, oy, ox) = acc;
                }
        }
    return y;
}

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t(Shape{2, 3}, 1.5);
    REQUIRE(t.size() == 6);
    REQUIRE(t.shape == Shape{2, 3});
    REQUIRE(t.all_finite());
    t.at2(1, 2) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_FALSE(t.all_finite());
    REQUIRE_THROWS_AS(Tensor(Shape{0, 3}), std::invalid_argument);
}

TEST_CASE("rng determinism and streams") {
    Rng a(123), b(123), c(124);
    for (int i = 0; i < 100; ++i) {
        double va = a.uniform();
        REQUIRE(va == b.uniform());
        REQUIRE(va >= 0.0);
        REQUIRE(va < 1.0);
    }
    REQUIRE(a.uniform() != c.uniform());
}

TEST_CASE("conv2d matches nested-loop oracle") {
    Rng rng(7);
    Tensor x = rand_uniform({2, 4, 5, 7}, rng, -1.0, 1.0);
    Tensor w = randn({6, 2, 3, 3}, rng);  // groups=2
    Var y = conv2d(make_var(x), make_var(w), 2, 1, 2);
    Tensor ref = conv_oracle(x, w, 2, 1, 2);
    REQUIRE(shapes_equal(y->value.shape, ref.shape));
    for (long long i = 0; i < ref.size(); ++i)
        REQUIRE(std::abs(y->value[i] - ref[i]) <= 1e-10);
}

TEST_CASE("conv2d shape arithmetic and errors") {
    Rng rng(8);
    Var x = make_var(rand_uniform({1, 8, 16, 16}, rng));
    Conv2DN conv(8, 4, 3, 1, 2, 1, rng);
    REQUIRE(conv.forward(x)->value.shape == Shape{1, 4, 8, 8});
    Var bad = make_var(rand_uniform({1, 5, 8, 8}, rng));
    REQUIRE_THROWS(conv.forward(bad));
    REQUIRE_THROWS_AS(Conv2D(8, 4, 3, 1, 1, 3, false, rng), std::invalid_argument);
}

TEST_CASE("conv2d_norm with identity kernel and standardized input is the identity") {
    // 1x1 identity weights; group norm in its identity-initialized state acts
    // as identity on input that is already standardized per group
    Rng rng(9);
    long long C = 8, H = 6, W = 6;
    Tensor x(Shape{1, C, H, W});
    for (long long c = 0; c < C; ++c) {
        double mean = 0.0, var = 0.0;
        std::vector<double> vals(static_cast<size_t>(H * W));
        for (auto& v : vals) v = rng.normal();
        for (double v : vals) mean += v;
        mean /= static_cast<double>(H * W);
        for (double v : vals) var += (v - mean) * (v - mean);
        var /= static_cast<double>(H * W);
        double inv = 1.0 / std::sqrt(var);
        for (long long i = 0; i < H * W; ++i)
            x.data[static_cast<size_t>(c * H * W + i)] = (vals[static_cast<size_t>(i)] - mean) * inv;
    }
    Conv2DN conv(C, C, 1, 0, 1, 1, rng);
    ParamRefs refs;
    conv.params(refs, "c");
    for (auto& [name, p] : refs)
        if (name == "c.conv.weight") {
            p->value().fill(0.0);
            for (long long c = 0; c < C; ++c) p->value().at4(c, c, 0, 0) = 1.0;
        }
    Var y = conv.forward(make_var(x));
    for (long long i = 0; i < y->value.size(); ++i)
        REQUIRE(std::abs(y->value[i] - x[i]) <= 1e-4);
}

TEST_CASE("bilinear_resize2d") {
    SECTION("constant image stays constant") {
        Var x = make_var(Tensor(Shape{1, 2, 3, 3}, 0.7));
        Var y = bilinear_up2(x);
        REQUIRE(y->value.shape == Shape{1, 2, 6, 6});
        for (long long i = 0; i < y->value.size(); ++i) REQUIRE(y->value[i] == 0.7);
    }
    SECTION("1x1 replicates") {
        Tensor t(Shape{1, 1, 1, 1});
        t[0] = 0.3;
        Var y = bilinear_up2(make_var(t));
        REQUIRE(y->value.shape == Shape{1, 1, 2, 2});
        for (long long i = 0; i < 4; ++i) REQUIRE(y->value[i] == 0.3);
    }
    SECTION("2x2 ramp matches the half-pixel reference") {
        Tensor t(Shape{1, 1, 2, 2});
        t.at4(0, 0, 0, 0) = 0.0;
        t.at4(0, 0, 0, 1) = 1.0;
        t.at4(0, 0, 1, 0) = 0.0;
        t.at4(0, 0, 1, 1) = 1.0;
        Var y = bilinear_up2(make_var(t));
        double expected[4] = {0.0, 0.25, 0.75, 1.0};
        for (long long r = 0; r < 4; ++r)
            for (long long c = 0; c < 4; ++c)
                REQUIRE(y->value.at4(0, 0, r, c) == Catch::Approx(expected[c]).margin(1e-12));
    }
    SECTION("rejects rank mismatch") {
        REQUIRE_THROWS(bilinear_up2(make_var(Tensor(Shape{2, 2}, 1.0))));
    }
}

TEST_CASE("broadcasting contract") {
    Rng rng(11);
    Tensor full = rand_uniform({2, 3, 4, 5}, rng);
    Tensor chan = rand_uniform({2, 3, 1, 1}, rng);
    Tensor pix = rand_uniform({2, 1, 4, 5}, rng);
    Var a = mul(make_var(full), make_var(chan));
    Var b = mul(make_var(pix), make_var(full));
    REQUIRE(a->value.shape == full.shape);
    REQUIRE(b->value.shape == full.shape);
    for (long long bb = 0; bb < 2; ++bb)
        for (long long c = 0; c < 3; ++c)
            for (long long y = 0; y < 4; ++y)
                for (long long x = 0; x < 5; ++x) {
                    REQUIRE(a->value.at4(bb, c, y, x) ==
                            full.at4(bb, c, y, x) * chan.at4(bb, c, 0, 0));
                    REQUIRE(b->value.at4(bb, c, y, x) ==
                            full.at4(bb, c, y, x) * pix.at4(bb, 0, y, x));
                }
    REQUIRE_THROWS(add(make_var(Tensor(Shape{2, 3}, 1.0)), make_var(Tensor(Shape{2, 4}, 1.0))));
}

TEST_CASE("softmax normalizes over the class axis") {
    Rng rng(12);
    Var x = make_var(randn({2, 5, 3, 3}, rng, 0.0, 2.0));
    Var s = softmax(x, 1);
    for (long long b = 0; b < 2; ++b)
        for (long long y = 0; y < 3; ++y)
            for (long long xx = 0; xx < 3; ++xx) {
                double sum = 0.0;
                for (long long c = 0; c < 5; ++c) sum += s->value.at4(b, c, y, xx);
                REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
            }
}

TEST_CASE("maxpool2d picks window maxima") {
    Tensor t(Shape{1, 1, 4, 4});
    for (long long i = 0; i < 16; ++i) t[i] = static_cast<double>((i * 7) % 16);
    Var y = maxpool2d(make_var(t), 2);
    for (long long oy = 0; oy < 2; ++oy)
        for (long long ox = 0; ox < 2; ++ox) {
            double best = -1e300;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    best = std::max(best, t.at4(0, 0, oy * 2 + dy, ox * 2 + dx));
            REQUIRE(y->value.at4(0, 0, oy, ox) == best);
        }
    REQUIRE_THROWS(maxpool2d(make_var(Tensor(Shape{1, 1, 5, 4}, 0.0)), 2));
}

TEST_CASE("group_norm standardizes per group") {
    Rng rng(13);
    Var x = make_var(randn({2, 8, 4, 4}, rng, 3.0, 2.5));
    GroupNorm gn(8);  // 8 channels -> 8 groups of one channel
    Var y = gn.forward(x);
    for (long long b = 0; b < 2; ++b)
        for (long long c = 0; c < 8; ++c) {
            double mean = 0.0, var = 0.0;
            for (long long i = 0; i < 16; ++i) mean += y->value.at4(b, c, i / 4, i % 4);
            mean /= 16.0;
            for (long long i = 0; i < 16; ++i) {
                double d = y->value.at4(b, c, i / 4, i % 4) - mean;
                var += d * d;
            }
            var /= 16.0;
            REQUIRE(mean == Catch::Approx(0.0).margin(1e-10));
            REQUIRE(var == Catch::Approx(1.0).epsilon(1e-3));
        }
}

TEST_CASE("finite_diff_check on the quadratic") {
    Parameter theta(Tensor::scalar(3.0));
    auto report = finite_diff_check([&] { return mul(theta.var(), theta.var()); }, {&theta}, 1e-6);
    theta.zero_grad();
    Var f = mul(theta.var(), theta.var());
    backward(f);
    REQUIRE(theta.grad()[0] == Catch::Approx(6.0).margin(1e-12));
    REQUIRE(report.max_rel_err < 1e-7);
    REQUIRE(report.pass(1e-4));
}

TEST_CASE("finite_diff_check flags non-finite objectives") {
    Parameter theta(Tensor::scalar(0.0));
    REQUIRE_THROWS_AS(
        finite_diff_check([&] { return vlog(theta.var()); }, {&theta}, 1e-6),
        std::domain_error);
}

TEST_CASE("primitive gradient suite passes at 1e-4") {
    auto results = run_gradcheck_suite(/*include_full_net=*/false);
    for (const auto& r : results) {
        INFO(r.name << " max_rel_err=" << r.max_rel_err << " tol=" << r.tol);
        CHECK(r.pass());
    }
}

TEST_CASE("parameter zero_grad leaves values untouched") {
    Rng rng(14);
    Parameter p(rand_uniform({3, 3}, rng));
    Tensor before = p.value();
    Var y = sum_all(mul(p.var(), p.var()));
    backward(y);
    REQUIRE(p.grad().sum() != 0.0);
    p.zero_grad();
    REQUIRE(p.grad().sum() == 0.0);
    for (long long i = 0; i < before.size(); ++i) REQUIRE(p.value()[i] == before[i]);
}

TEST_CASE("forward determinism under a fixed seed") {
    Rng in_rng(555);
    Tensor img1 = rand_uniform({1, 3, 64, 64}, in_rng);
    Tensor img2 = rand_uniform({1, 3, 64, 64}, in_rng);
    MantisConfig cfg;
    cfg.depth = 4;
    cfg.nf = 8;
    cfg.seed = 777;
    MantisNet a(cfg), b(cfg);
    MantisOutputs oa = a.forward(make_var(img1), make_var(img2));
    MantisOutputs ob = b.forward(make_var(img1), make_var(img2));
    for (long long i = 0; i < oa.segmentation->value.size(); ++i)
        REQUIRE(oa.segmentation->value[i] == ob.segmentation->value[i]);
}
