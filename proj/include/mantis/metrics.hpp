#pragma once

#include "mantis/tensor.hpp"

namespace mantis {

struct Confusion {
    unsigned long long tp = 0, tn = 0, fp = 0, fn = 0;

    void add(bool pred, bool truth) {
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
        else ++tn;
    }
    Confusion& operator+=(const Confusion& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    unsigned long long total() const { return tp + tn + fp + fn; }
};

inline Confusion confusion_counts(const Tensor& pred_mask, const Tensor& gt_mask) {
    if (!shapes_equal(pred_mask.shape, gt_mask.shape))
        throw std::invalid_argument("confusion_counts: shape mismatch");
    Confusion c;
    for (long long i = 0; i < pred_mask.size(); ++i) c.add(pred_mask[i] > 0.5, gt_mask[i] > 0.5);
    return c;
}

struct Metrics {
    double precision = 0.0, recall = 0.0, f1 = 0.0, mcc = 0.0, iou = 0.0;
};

// Pixel-count metrics; degenerate denominators yield 0.
inline Metrics metrics_from(const Confusion& c) {
    Metrics m;
    double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
    double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    m.precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    m.recall = (tp + fn) > 0.0 ? tp / (tp + fn) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    m.mcc = den > 0.0 ? (tp * tn - fp * fn) / std::sqrt(den) : 0.0;
    m.iou = (tp + fn + fp) > 0.0 ? tp / (tp + fn + fp) : 0.0;
    return m;
}

inline Metrics metrics(const Tensor& pred_mask, const Tensor& gt_mask) {
    return metrics_from(confusion_counts(pred_mask, gt_mask));
}

// Indices of the non-dominated subset when maximizing both coordinates:
// kept points have no other point >= in both coordinates and > in one.
inline std::vector<size_t> pareto_front_indices(const std::vector<std::pair<double, double>>& pts) {
    if (pts.empty()) throw std::invalid_argument("pareto_front: empty input");
    std::vector<size_t> order(pts.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (pts[a].first != pts[b].first) return pts[a].first > pts[b].first;
        return pts[a].second > pts[b].second;
    });
    std::vector<size_t> front;
    double best_y_strict = -std::numeric_limits<double>::infinity();  // over strictly larger x
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j < order.size() && pts[order[j]].first == pts[order[i]].first) ++j;
        double group_best_y = pts[order[i]].second;
        for (size_t k = i; k < j; ++k) {
            double y = pts[order[k]].second;
            // dominated by a strictly-larger-x point, or by an equal-x point with larger y
            if (y < best_y_strict || y < group_best_y) continue;
            if (y == best_y_strict) {
                // equal y with larger x dominates
                continue;
            }
            front.push_back(order[k]);
        }
        best_y_strict = std::max(best_y_strict, group_best_y);
        i = j;
    }
    std::sort(front.begin(), front.end());
    return front;
}

}  // namespace mantis
