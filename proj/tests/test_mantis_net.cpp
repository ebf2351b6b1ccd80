#include <catch2/catch_amalgamated.hpp>

#include "mantis/model.hpp"

using namespace mantis;

namespace {

MantisNet small_net(UnitVariant variant = UnitVariant::FractalResNet, uint64_t seed = 7) {
    MantisConfig cfg;
    cfg.depth = 4;
    cfg.nf = 8;
    cfg.variant = variant;
    cfg.seed = seed;
    return MantisNet(cfg);
}

}  // namespace

TEST_CASE("feature shape ledger for D4nf8") {
    Rng rng(1);
    MantisNet net = small_net();
    Var a = make_var(rand_uniform({1, 3, 64, 64}, rng));
    Var b = make_var(rand_uniform({1, 3, 64, 64}, rng));
    auto f = net.features(a, b);
    REQUIRE(f.final_features->value.shape == Shape{1, 8, 64, 64});
    REQUIRE(f.first_fused->value.shape == Shape{1, 8, 64, 64});
    REQUIRE(f.branch1.size() == 4);
    for (int i = 0; i < 4; ++i) {
        REQUIRE(f.branch1[static_cast<size_t>(i)]->value.shape ==
                Shape{1, 8LL << i, 64 >> i, 64 >> i});
    }
}

TEST_CASE("input validation") {
    Rng rng(2);
    MantisNet net = small_net();
    Var ok = make_var(rand_uniform({1, 3, 64, 64}, rng));
    Var небольшая = make_var(rand_uniform({1, 3, 48, 48}, rng));
    REQUIRE_THROWS_AS(net.features(ok, make_var(rand_uniform({1, 3, 64, 32}, rng))),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(net.features(небольшая, небольшая), std::invalid_argument);
    Var wrong_ch = make_var(rand_uniform({1, 4, 64, 64}, rng));
    REQUIRE_THROWS_AS(net.features(wrong_ch, wrong_ch), std::invalid_argument);
}

TEST_CASE("shared encoder weights: identical inputs give identical branches") {
    Rng rng(3);
    MantisNet net = small_net();
    Var img = make_var(rand_uniform({1, 3, 64, 64}, rng));
    auto f = net.features(img, img);
    for (size_t i = 0; i < f.branch1.size(); ++i)
        for (long long j = 0; j < f.branch1[i]->value.size(); ++j)
            REQUIRE(f.branch1[i]->value[j] == f.branch2[i]->value[j]);
}

TEST_CASE("swapping the input pair swaps the branch features exactly") {
    Rng rng(4);
    MantisNet net = small_net();
    Var a = make_var(rand_uniform({1, 3, 64, 64}, rng));
    Var b = make_var(rand_uniform({1, 3, 64, 64}, rng));
    auto fwd = net.features(a, b);
    auto swp = net.features(b, a);
    for (size_t i = 0; i < fwd.branch1.size(); ++i)
        for (long long j = 0; j < fwd.branch1[i]->value.size(); ++j) {
            REQUIRE(fwd.branch1[i]->value[j] == swp.branch2[i]->value[j]);
            REQUIRE(fwd.branch2[i]->value[j] == swp.branch1[i]->value[j]);
        }
}

TEST_CASE("segmentation head outputs") {
    Rng rng(5);
    MantisNet net = small_net();
    Var a = make_var(rand_uniform({2, 3, 64, 64}, rng));
    Var b = make_var(rand_uniform({2, 3, 64, 64}, rng));
    MantisOutputs out = net.forward(a, b);
    REQUIRE(out.distance->value.shape == Shape{2, 1, 64, 64});
    REQUIRE(out.boundary->value.shape == Shape{2, 1, 64, 64});
    REQUIRE(out.segmentation->value.shape == Shape{2, 2, 64, 64});
    for (long long i = 0; i < out.distance->value.size(); ++i) {
        REQUIRE(out.distance->value[i] >= 0.0);
        REQUIRE(out.distance->value[i] <= 1.0);
        REQUIRE(out.boundary->value[i] >= 0.0);
        REQUIRE(out.boundary->value[i] <= 1.0);
    }
    for (long long bb = 0; bb < 2; ++bb)
        for (long long y = 0; y < 64; ++y)
            for (long long x = 0; x < 64; ++x) {
                double s = out.segmentation->value.at4(bb, 0, y, x) +
                           out.segmentation->value.at4(bb, 1, y, x);
                REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
            }
}

TEST_CASE("zero-weight head predicts the uniform class distribution") {
    Rng rng(6);
    MantisNet net = small_net();
    ParamRefs refs;
    net.params(refs);
    for (auto& [name, p] : refs)
        if (name.rfind("head.", 0) == 0 && name != "head.gamma_sigmoid") p->value().fill(0.0);
    Var a = make_var(rand_uniform({1, 3, 64, 64}, rng));
    Var b = make_var(rand_uniform({1, 3, 64, 64}, rng));
    MantisOutputs out = net.forward(a, b);
    for (long long i = 0; i < out.segmentation->value.size(); ++i)
        REQUIRE(out.segmentation->value[i] == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("crisp sigmoid") {
    SECTION("x=0 gives 0.5 for any gamma") {
        for (double g : {0.01, 0.3, 1.0, 2.0}) {
            Var y = crisp_sigmoid(make_var(Tensor::scalar(0.0)), scalar_const(g));
            REQUIRE(y->value[0] == 0.5);
        }
    }
    SECTION("gamma=1 is the standard sigmoid") {
        for (double x : {-2.0, -0.5, 0.7, 3.0}) {
            Var y = crisp_sigmoid(make_var(Tensor::scalar(x)), scalar_const(1.0));
            REQUIRE(y->value[0] == Catch::Approx(1.0 / (1.0 + std::exp(-x))).margin(1e-15));
        }
    }
    SECTION("trained LEVIRCD scale: gamma=0.610 at x=0.5") {
        Var y = crisp_sigmoid(make_var(Tensor::scalar(0.5)), scalar_const(0.610));
        double expected = 1.0 / (1.0 + std::exp(-0.5 / 0.610));
        REQUIRE(y->value[0] == Catch::Approx(expected).margin(1e-12));
        REQUIRE(y->value[0] == Catch::Approx(0.6942).margin(5e-4));
    }
    SECTION("clamp keeps the effective scale inside [1e-2, 1]") {
        Var tiny = crisp_sigmoid(make_var(Tensor::scalar(1.0)), scalar_const(1e-6));
        REQUIRE(tiny->value[0] == Catch::Approx(1.0 / (1.0 + std::exp(-100.0))).margin(1e-12));
        Var big = crisp_sigmoid(make_var(Tensor::scalar(1.0)), scalar_const(7.0));
        REQUIRE(big->value[0] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))).margin(1e-12));
    }
}

TEST_CASE("gamma_sigmoid stays effective in [1e-2,1] after optimizer-style updates") {
    Rng rng(7);
    MantisNet net = small_net();
    Parameter& g = net.head().gamma_sigmoid();
    for (int it = 0; it < 50; ++it) {
        g.value()[0] += (it % 2 == 0 ? 2.0 : -3.0);  // adversarial drift
        double eff = net.head().effective_gamma();
        REQUIRE(eff >= 1e-2);
        REQUIRE(eff <= 1.0);
    }
}

TEST_CASE("attention-ablated forward is bit-equal at freshly initialized gammas") {
    Rng rng(8);
    for (auto variant : {UnitVariant::FractalResNet, UnitVariant::CEECNetV1}) {
        MantisNet net = small_net(variant, 31 + static_cast<uint64_t>(variant));
        Var a = make_var(rand_uniform({1, 3, 64, 64}, rng));
        Var b = make_var(rand_uniform({1, 3, 64, 64}, rng));
        MantisOutputs with_att = net.forward(a, b);
        net.set_attention_enabled(false);
        MantisOutputs ablated = net.forward(a, b);
        net.set_attention_enabled(true);
        for (long long i = 0; i < with_att.segmentation->value.size(); ++i)
            REQUIRE(with_att.segmentation->value[i] == ablated.segmentation->value[i]);
        for (long long i = 0; i < with_att.distance->value.size(); ++i) {
            REQUIRE(with_att.distance->value[i] == ablated.distance->value[i]);
            REQUIRE(with_att.boundary->value[i] == ablated.boundary->value[i]);
        }
    }
}

TEST_CASE("gradient reaches every parameter group") {
    Rng rng(9);
    MantisNet net = small_net();
    ParamRefs refs;
    net.params(refs);
    for (auto& [name, p] : refs) p->zero_grad();
    Var a = make_var(rand_uniform({1, 3, 64, 64}, rng));
    Var b = make_var(rand_uniform({1, 3, 64, 64}, rng));
    MantisOutputs out = net.forward(a, b);
    // pull on all three task outputs so every head branch participates
    Var loss = mean_all(mul(out.segmentation, out.segmentation));
    loss = add(loss, mean_all(mul(out.distance, out.distance)));
    loss = add(loss, mean_all(mul(out.boundary, out.boundary)));
    backward(loss);
    for (auto& [name, p] : refs) {
        double norm = 0.0;
        for (long long i = 0; i < p->grad().size(); ++i) norm += p->grad()[i] * p->grad()[i];
        INFO("parameter " << name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("feature entropy diagnostic") {
    SECTION("all values in one bin give zero bits") {
        REQUIRE(feature_entropy(Tensor(Shape{2, 4, 4}, 0.77), 256) == 0.0);
    }
    SECTION("uniform over 2^k bins gives k bits") {
        for (int k : {2, 4, 6}) {
            int bins = 1 << k;
            Tensor t(Shape{1, static_cast<long long>(bins)});
            for (int i = 0; i < bins; ++i)
                t[i] = -1.0 + 2.0 * static_cast<double>(i) / (bins - 1);
            REQUIRE(feature_entropy(t, bins) == Catch::Approx(static_cast<double>(k)).margin(1e-12));
        }
    }
    SECTION("bin count and emptiness validated") {
        REQUIRE_THROWS_AS(feature_entropy(Tensor(Shape{2, 2}, 0.0), 1), std::invalid_argument);
    }
}
