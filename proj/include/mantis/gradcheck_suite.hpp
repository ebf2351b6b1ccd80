#pragma once

#include "mantis/gradcheck.hpp"
#include "mantis/model.hpp"
#include "mantis/trainer.hpp"

namespace mantis {

struct SuiteResult {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 1e-4;
    long long coords = 0;
    bool pass() const { return max_rel_err <= tol; }
};

namespace detail {

// scalar objective: mean of out .* fixed random weights, so every output
// coordinate contributes a distinct gradient signal
inline Var weighted_mean(const Var& out, uint64_t seed) {
    Rng rng(seed);
    return mean_all(mul(out, constant(rand_uniform(out->value.shape, rng, 0.5, 1.5))));
}

inline SuiteResult run_check(const std::string& name, const std::function<Var()>& f,
                             std::vector<Parameter*> params, double tol, double eps = 1e-6,
                             std::optional<int> sample = std::nullopt) {
    GradCheckReport rep = finite_diff_check(f, params, eps, sample);
    return {name, rep.max_rel_err, tol, rep.coords_checked};
}

}  // namespace detail

// Gradient verification across the primitive suite, the loss family, the
// attention/fusion layers, each unit and the full network.
inline std::vector<SuiteResult> run_gradcheck_suite(bool include_full_net = true) {
    std::vector<SuiteResult> results;
    Rng rng(20240817);

    // --- substrate primitives ---
    {
        Parameter theta(Tensor::scalar(3.0));
        results.push_back(detail::run_check(
            "quadratic", [&] { return mul(theta.var(), theta.var()); }, {&theta}, 1e-6));
    }
    {
        Parameter a(rand_uniform({2, 3, 4, 4}, rng, -1.0, 1.0));
        Parameter b(rand_uniform({2, 3, 1, 1}, rng, 0.5, 1.5));
        Parameter c(rand_uniform({2, 1, 4, 4}, rng, 0.5, 1.5));
        results.push_back(detail::run_check(
            "elementwise_add_mul_div_broadcast",
            [&] {
                Var t = mul(a.var(), b.var());
                t = add(t, c.var());
                t = div(t, affine(c.var(), 1.0, 2.0));
                return detail::weighted_mean(t, 11);
            },
            {&a, &b, &c}, 1e-4));
    }
    {
        // relu sampled away from the kink
        Tensor init = rand_uniform({2, 3, 4, 4}, rng, 0.2, 1.0);
        for (long long i = 0; i < init.size(); ++i)
            if (i % 2 == 0) init[i] = -init[i];
        Parameter a(init);
        results.push_back(detail::run_check(
            "relu", [&] { return detail::weighted_mean(relu(a.var()), 12); }, {&a}, 1e-4));
    }
    {
        Parameter a(randn({2, 3, 4, 4}, rng));
        results.push_back(detail::run_check(
            "sigmoid", [&] { return detail::weighted_mean(sigmoid(a.var()), 13); }, {&a}, 1e-4));
    }
    {
        Parameter a(randn({2, 4, 3, 3}, rng));
        results.push_back(detail::run_check(
            "softmax_channel", [&] { return detail::weighted_mean(softmax(a.var(), 1), 14); }, {&a},
            1e-4));
    }
    {
        Parameter a(rand_uniform({2, 3, 4, 4}, rng, 0.1, 0.9));
        results.push_back(detail::run_check(
            "sum_axes_keepdims",
            [&] {
                Var s = reduce_sum(a.var(), {2, 3});
                Var u = reduce_sum(a.var(), {1});
                return add(detail::weighted_mean(s, 15), detail::weighted_mean(u, 16));
            },
            {&a}, 1e-4));
    }
    {
        Parameter a(randn({2, 2, 3, 3}, rng));
        Parameter b(randn({2, 3, 3, 3}, rng));
        results.push_back(detail::run_check(
            "concat_channel", [&] { return detail::weighted_mean(concat({a.var(), b.var()}, 1), 17); },
            {&a, &b}, 1e-4));
    }
    {
        Parameter x(randn({2, 4, 6, 6}, rng));
        Rng wr(5);
        Conv2D conv(4, 6, 3, 1, 2, 2, true, wr);
        ParamRefs refs;
        conv.params(refs, "conv");
        auto ps = pointers(refs);
        ps.push_back(&x);
        results.push_back(detail::run_check(
            "conv2d_grouped_strided", [&] { return detail::weighted_mean(conv.forward(x.var()), 18); },
            ps, 1e-4));
    }
    {
        Parameter x(randn({2, 8, 4, 4}, rng));
        GroupNorm gn(8);
        ParamRefs refs;
        gn.params(refs, "gn");
        auto ps = pointers(refs);
        ps.push_back(&x);
        results.push_back(detail::run_check(
            "group_norm", [&] { return detail::weighted_mean(gn.forward(x.var()), 19); }, ps, 1e-4));
    }
    {
        Parameter x(randn({3, 6}, rng));
        Rng wr(6);
        DenseN dn(6, 5, wr);
        ParamRefs refs;
        dn.params(refs, "dense");
        auto ps = pointers(refs);
        ps.push_back(&x);
        results.push_back(detail::run_check(
            "dense_norm", [&] { return detail::weighted_mean(dn.forward(x.var()), 20); }, ps, 1e-4));
    }
    {
        // distinct values keep the argmax stable under the probe
        Tensor init(Shape{1, 2, 4, 4});
        for (long long i = 0; i < init.size(); ++i) init[i] = static_cast<double>((i * 37) % 29) + 0.01 * static_cast<double>(i);
        Parameter x(init);
        results.push_back(detail::run_check(
            "maxpool2d", [&] { return detail::weighted_mean(maxpool2d(x.var(), 2), 21); }, {&x}, 1e-4));
    }
    {
        Parameter x(randn({1, 3, 3, 4}, rng));
        results.push_back(detail::run_check(
            "bilinear_resize2d", [&] { return detail::weighted_mean(bilinear_up2(x.var()), 22); }, {&x},
            1e-4));
    }

    // --- fractal Tanimoto family ---
    {
        Parameter p(rand_uniform({2, 3, 4, 4}, rng, 0.05, 0.95));
        Parameter l(rand_uniform({2, 3, 4, 4}, rng, 0.05, 0.95));
        results.push_back(detail::run_check(
            "tanimoto_d",
            [&] {
                Var s = tanimoto_d(p.var(), l.var(), FTConfig{5.0, {2, 3}, 1e-5});
                Var c = tanimoto_d(p.var(), l.var(), FTConfig{3.0, {1}, 1e-5});
                return add(detail::weighted_mean(s, 23), detail::weighted_mean(c, 24));
            },
            {&p, &l}, 1e-4));
    }
    {
        Parameter p(rand_uniform({2, 3, 4, 4}, rng, 0.05, 0.95));
        Parameter l(rand_uniform({2, 3, 4, 4}, rng, 0.05, 0.95));
        results.push_back(detail::run_check(
            "ftnmt_loss_d5", [&] { return ftnmt_loss(p.var(), l.var(), 5); }, {&p, &l}, 1e-4));
    }
    {
        Parameter p(rand_uniform({1, 2, 4, 4}, rng, 0.05, 0.95));
        Parameter l(rand_uniform({1, 2, 4, 4}, rng, 0.05, 0.95));
        results.push_back(detail::run_check(
            "ftnmt_complement_avg",
            [&] {
                Var c = ftnmt_complement(p.var(), l.var(), FTConfig{2.0, {1, 2, 3}, 1e-5});
                Var a = ftnmt_avg(p.var(), l.var(), {1, 2, 3}, 4);
                return add(mean_all(c), mean_all(a));
            },
            {&p, &l}, 1e-4));
    }

    // --- attention and fusion ---
    {
        Rng wr(7);
        FracTALAttention att(4, 2, 5, wr);
        Parameter q(randn({1, 4, 5, 5}, rng, 0.0, 0.5));
        Parameter k(randn({1, 4, 5, 5}, rng, 0.0, 0.5));
        Parameter v(randn({1, 4, 5, 5}, rng, 0.0, 0.5));
        ParamRefs refs;
        att.params(refs, "att");
        auto ps = pointers(refs);
        ps.push_back(&q);
        ps.push_back(&k);
        ps.push_back(&v);
        results.push_back(detail::run_check(
            "fractal_attention",
            [&] { return detail::weighted_mean(att.forward(q.var(), k.var(), v.var()), 25); }, ps,
            1e-4));
    }
    {
        Parameter L(randn({1, 3, 4, 4}, rng));
        Parameter A(rand_uniform({1, 3, 4, 4}, rng));
        Parameter gamma(Tensor(Shape{1}, 0.0));  // gradient must flow through gamma at its zero init
        results.push_back(detail::run_check(
            "self_fusion_gamma0",
            [&] { return detail::weighted_mean(self_fusion(L.var(), A.var(), gamma.var()), 26); },
            {&L, &A, &gamma}, 1e-4));
    }
    {
        Rng wr(8);
        RelativeFusion fusion(4, 1, 3, wr);
        Parameter L1(randn({1, 4, 4, 4}, rng, 0.0, 0.5));
        Parameter L2(randn({1, 4, 4, 4}, rng, 0.0, 0.5));
        ParamRefs refs;
        fusion.params(refs, "fusion");
        auto ps = pointers(refs);
        ps.push_back(&L1);
        ps.push_back(&L2);
        results.push_back(detail::run_check(
            "relative_fusion_gamma0",
            [&] { return detail::weighted_mean(fusion.forward(L1.var(), L2.var()), 27); }, ps, 1e-4));
    }
    {
        Parameter x(randn({1, 1, 4, 4}, rng));
        Parameter gamma(Tensor(Shape{1}, 0.61));  // interior point of the clamp
        results.push_back(detail::run_check(
            "crisp_sigmoid",
            [&] { return detail::weighted_mean(crisp_sigmoid(x.var(), gamma.var()), 28); },
            {&x, &gamma}, 1e-4));
    }

    // --- units ---
    auto unit_check = [&](const std::string& name, UnitVariant variant) {
        Rng wr(9);
        auto unit = make_unit(variant, 8, 1, 3, wr);
        Parameter x(randn({1, 8, 8, 8}, rng, 0.0, 0.5));
        ParamRefs refs;
        unit->params(refs, "unit");
        auto ps = pointers(refs);
        ps.push_back(&x);
        results.push_back(detail::run_check(
            name, [&] { return detail::weighted_mean(unit->forward(x.var()), 29); }, ps, 1e-4, 1e-6,
            6));
    };
    unit_check("unit_fractal_resnet", UnitVariant::FractalResNet);
    unit_check("unit_ceecnet_v1", UnitVariant::CEECNetV1);
    unit_check("unit_ceecnet_v2", UnitVariant::CEECNetV2);

    // --- full network on one chip, sampled coordinates ---
    if (include_full_net) {
        MantisConfig cfg;
        cfg.depth = 4;
        cfg.nf = 8;
        cfg.seed = 99;
        MantisNet net(cfg);
        auto chips = synth_dataset(1, 64, 555);
        std::vector<const ChipPair*> ptrs{&chips[0]};
        Batch batch = make_batch(ptrs);
        ParamRefs refs;
        net.params(refs);
        auto all = pointers(refs);
        std::vector<Parameter*> subset;
        size_t step = std::max<size_t>(1, all.size() / 24);
        for (size_t i = 0; i < all.size(); i += step) subset.push_back(all[i]);
        results.push_back(detail::run_check(
            "mantis_d4nf8_multitask_loss",
            [&] {
                MantisOutputs out = net.forward(batch.t1, batch.t2);
                return multitask_loss(out, batch.seg_target, batch.boundary_target,
                                      batch.distance_target, 5, cfg.smooth);
            },
            subset, 1e-3, 1e-5, 1));
    }

    return results;
}

}  // namespace mantis
