#pragma once

#include "mantis/autodiff.hpp"

namespace mantis {

// Configuration for one fractal Tanimoto evaluation. Depth may be fractional
// for the plain and complemented forms; the depth-averaged form needs an
// integer depth.
struct FTConfig {
    double depth = 0.0;
    std::vector<int> axes;
    double smooth = 1e-5;
};

namespace detail {

inline void check_unit_range(const Tensor& t, const char* what) {
#ifndef NDEBUG
    for (double v : t.data)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::domain_error(std::string(what) + ": entries must lie in [0,1]");
#endif
    (void)t;
    (void)what;
}

// T^d from the three reduced dot products; numerator and denominator both
// offset by `smooth`.
inline Var tanimoto_from_sums(const Var& tpl, const Var& tpp, const Var& tll, double depth,
                              double smooth) {
    double a = std::pow(2.0, depth);
    double b = -(2.0 * a - 1.0);
    Var den = lincomb(a, add(tpp, tll), b, tpl, smooth);
    return div(affine(tpl, 1.0, smooth), den);
}

struct TanimotoSums {
    Var tpl, tpp, tll;
};

inline TanimotoSums tanimoto_sums(const Var& p, const Var& l, const std::vector<int>& axes) {
    return {reduce_sum(mul(p, l), axes), reduce_sum(mul(p, p), axes), reduce_sum(mul(l, l), axes)};
}

struct TanimotoProducts {
    Var pl, pp, ll, plc, ppc, llc;
};

inline TanimotoProducts tanimoto_products(const Var& p, const Var& l) {
    Var pc = affine(p, -1.0, 1.0), lc = affine(l, -1.0, 1.0);
    return {mul(p, l), mul(p, p), mul(l, l), mul(pc, lc), mul(pc, pc), mul(lc, lc)};
}

// per-depth terms share the dot products and the smoothed numerator
inline Var tanimoto_depth_average(const TanimotoSums& s, const TanimotoSums& sc, int terms,
                                  double smooth) {
    Var sum_sq = add(s.tpp, s.tll);
    Var sum_sq_c = add(sc.tpp, sc.tll);
    Var num = affine(s.tpl, 1.0, smooth);
    Var num_c = affine(sc.tpl, 1.0, smooth);
    Var acc;
    for (int i = 0; i < terms; ++i) {
        double a = std::pow(2.0, i);
        double b = -(2.0 * a - 1.0);
        Var t = div(num, lincomb(a, sum_sq, b, s.tpl, smooth));
        Var tc = div(num_c, lincomb(a, sum_sq_c, b, sc.tpl, smooth));
        Var ft = lincomb(0.5, t, 0.5, tc);
        acc = i == 0 ? ft : add(acc, ft);
    }
    return affine(acc, 1.0 / static_cast<double>(terms), 0.0);
}

}  // namespace detail

// Closed-form fractal Tanimoto similarity, reduced over cfg.axes (kept dims).
inline Var tanimoto_d(const Var& p, const Var& l, const FTConfig& cfg) {
    if (!shapes_equal(p->value.shape, l->value.shape))
        throw std::invalid_argument("tanimoto_d: shape mismatch " + shape_str(p->value.shape) +
                                    " vs " + shape_str(l->value.shape));
    if (cfg.axes.empty()) throw std::invalid_argument("tanimoto_d: no reduction axes");
    if (cfg.depth < 0.0) throw std::invalid_argument("tanimoto_d: depth must be >= 0");
    detail::check_unit_range(p->value, "tanimoto_d(p)");
    detail::check_unit_range(l->value, "tanimoto_d(l)");
    auto s = detail::tanimoto_sums(p, l, cfg.axes);
    return detail::tanimoto_from_sums(s.tpl, s.tpp, s.tll, cfg.depth, cfg.smooth);
}

// Literal evaluation of the iterative definition
//   T^d = T^{d-1}(p,l) / (T^{d-1}(p,p) + T^{d-1}(l,l) - T^{d-1}(p,l)),
// with T^0 the plain Tanimoto of the reduced dot products. No smoothing:
// degenerate all-zero inputs surface as non-finite values.
inline Tensor tanimoto_recursive_oracle(const Tensor& p, const Tensor& l, std::vector<int> axes,
                                        int depth) {
    if (!shapes_equal(p.shape, l.shape))
        throw std::invalid_argument("tanimoto_recursive_oracle: shape mismatch");
    if (depth < 0 || depth > 12)
        throw std::invalid_argument("tanimoto_recursive_oracle: depth must lie in [0,12]");
    Var pv = constant(p), lv = constant(l);
    auto s = detail::tanimoto_sums(pv, lv, axes);
    Tensor tpl = s.tpl->value, tpp = s.tpp->value, tll = s.tll->value;
    long long n = tpl.size();
    auto t0 = [](double ab, double aa, double bb) { return ab / (aa + bb - ab); };
    Tensor cur_pl(tpl.shape), cur_pp(tpl.shape), cur_ll(tpl.shape);
    for (long long i = 0; i < n; ++i) {
        cur_pl[i] = t0(tpl[i], tpp[i], tll[i]);
        cur_pp[i] = t0(tpp[i], tpp[i], tpp[i]);
        cur_ll[i] = t0(tll[i], tll[i], tll[i]);
    }
    for (int d = 1; d <= depth; ++d) {
        Tensor next_pl(tpl.shape), next_pp(tpl.shape), next_ll(tpl.shape);
        for (long long i = 0; i < n; ++i) {
            next_pl[i] = t0(cur_pl[i], cur_pp[i], cur_ll[i]);
            next_pp[i] = t0(cur_pp[i], cur_pp[i], cur_pp[i]);
            next_ll[i] = t0(cur_ll[i], cur_ll[i], cur_ll[i]);
        }
        cur_pl = std::move(next_pl);
        cur_pp = std::move(next_pp);
        cur_ll = std::move(next_ll);
    }
    for (long long i = 0; i < n; ++i)
        if (!std::isfinite(cur_pl[i]))
            throw std::domain_error("tanimoto_recursive_oracle: non-finite intermediate (zero input?)");
    return cur_pl;
}

// (T^d(p,l) + T^d(1-p,1-l)) / 2
inline Var ftnmt_complement(const Var& p, const Var& l, const FTConfig& cfg) {
    Var direct = tanimoto_d(p, l, cfg);
    FTConfig c = cfg;
    Var comp = tanimoto_d(affine(p, -1.0, 1.0), affine(l, -1.0, 1.0), c);
    return affine(add(direct, comp), 0.5, 0.0);
}

// Mean of the complemented form over depths 0..d-1; at d=0 it reverts to the
// single depth-0 term. Dot products are shared across depths.
inline Var ftnmt_avg(const Var& p, const Var& l, const std::vector<int>& axes, int depth,
                     double smooth = 1e-5) {
    if (depth < 0) throw std::invalid_argument("ftnmt_avg: depth must be >= 0");
    if (!shapes_equal(p->value.shape, l->value.shape))
        throw std::invalid_argument("ftnmt_avg: shape mismatch");
    detail::check_unit_range(p->value, "ftnmt_avg(p)");
    detail::check_unit_range(l->value, "ftnmt_avg(l)");
    Var pc = affine(p, -1.0, 1.0), lc = affine(l, -1.0, 1.0);
    auto s = detail::tanimoto_sums(p, l, axes);
    auto sc = detail::tanimoto_sums(pc, lc, axes);
    return detail::tanimoto_depth_average(s, sc, std::max(depth, 1), smooth);
}

// <FT>^d over two axis sets at once, sharing the elementwise products.
inline std::pair<Var, Var> ftnmt_avg_dual(const Var& p, const Var& l,
                                          const std::vector<int>& axes_a,
                                          const std::vector<int>& axes_b, int depth,
                                          double smooth = 1e-5) {
    auto pr = detail::tanimoto_products(p, l);
    int terms = std::max(depth, 1);
    auto avg_for = [&](const std::vector<int>& axes) {
        detail::TanimotoSums s{reduce_sum(pr.pl, axes), reduce_sum(pr.pp, axes),
                               reduce_sum(pr.ll, axes)};
        detail::TanimotoSums sc{reduce_sum(pr.plc, axes), reduce_sum(pr.ppc, axes),
                                reduce_sum(pr.llc, axes)};
        return detail::tanimoto_depth_average(s, sc, terms, smooth);
    };
    return {avg_for(axes_a), avg_for(axes_b)};
}

// L = 1 - <FT>^d, reduced over channel+spatial axes then averaged over batch.
inline Var ftnmt_loss(const Var& pred, const Var& target, int depth, double smooth = 1e-5) {
    int r = pred->value.rank();
    if (r < 2) throw std::invalid_argument("ftnmt_loss: rank >= 2 required");
    std::vector<int> axes;
    for (int i = 1; i < r; ++i) axes.push_back(i);
    Var sim = ftnmt_avg(pred, target, axes, depth, smooth);
    return affine(mean_all(sim), -1.0, 1.0);
}

}  // namespace mantis
