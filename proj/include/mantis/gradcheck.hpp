#pragma once

#include <functional>
#include <optional>

#include "mantis/nn.hpp"

namespace mantis {

struct GradCheckEntry {
    std::string name;
    double rel_err = 0.0;
    long long coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckEntry> per_param;
    long long coords_checked = 0;

    bool pass(double tol) const { return max_rel_err <= tol; }
};

// Central-difference gradient verification. `f` rebuilds the scalar graph from
// the current parameter values. When `sample_per_param` is set, only that many
// randomly chosen coordinates of each parameter are probed.
inline GradCheckReport finite_diff_check(const std::function<Var()>& f,
                                         const std::vector<Parameter*>& params, double eps = 1e-6,
                                         std::optional<int> sample_per_param = std::nullopt,
                                         uint64_t sample_seed = 7) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_check: eps must be > 0");
    for (auto* p : params) p->zero_grad();
    Var root = f();
    if (!std::isfinite(root->value[0]))
        throw std::domain_error("finite_diff_check: objective is non-finite");
    backward(root);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) analytic.push_back(p->grad());

    Rng rng(sample_seed);
    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        GradCheckEntry entry;
        entry.name = "param" + std::to_string(pi);
        long long n = p.value().size();
        std::vector<long long> coords;
        if (sample_per_param && *sample_per_param < n) {
            for (int s = 0; s < *sample_per_param; ++s) coords.push_back(rng.uniform_int(0, n - 1));
        } else {
            coords.resize(static_cast<size_t>(n));
            for (long long i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        }
        for (long long c : coords) {
            double saved = p.value()[c];
            p.value()[c] = saved + eps;
            double fp = f()->value[0];
            p.value()[c] = saved - eps;
            double fm = f()->value[0];
            p.value()[c] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::domain_error("finite_diff_check: non-finite at perturbation point");
            double numeric = (fp - fm) / (2.0 * eps);
            double an = analytic[pi][c];
            double denom = std::max({std::abs(numeric), std::abs(an), 1e-6});
            double rel = std::abs(numeric - an) / denom;
            report.coords_checked++;
            if (rel > entry.rel_err) {
                entry.rel_err = rel;
                entry.coord = c;
                entry.analytic = an;
                entry.numeric = numeric;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.rel_err);
        report.per_param.push_back(entry);
    }
    return report;
}

inline std::vector<Parameter*> pointers(ParamRefs& refs) {
    std::vector<Parameter*> out;
    out.reserve(refs.size());
    for (auto& [name, p] : refs) out.push_back(p);
    return out;
}

}  // namespace mantis
