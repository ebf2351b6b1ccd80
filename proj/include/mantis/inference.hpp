#pragma once

#include <fstream>
#include <functional>
#include <sstream>

#include "mantis/data.hpp"
#include "mantis/metrics.hpp"
#include "mantis/model.hpp"

namespace mantis {

struct InferenceConfig {
    long long window = 256;
    long long stride = 64;
    double threshold = 0.5;

    void validate() const {
        if (stride < 1 || stride > window)
            throw std::invalid_argument("InferenceConfig: need 1 <= stride <= window");
        if (!(threshold > 0.0 && threshold < 1.0))
            throw std::invalid_argument("InferenceConfig: threshold must lie in (0,1)");
    }
};

// evaluates one coregistered window pair (C,F,F) to a change-probability map (F,F)
using WindowFn = std::function<Tensor(const Tensor&, const Tensor&)>;

inline WindowFn model_window_fn(const MantisNet& net) {
    return [&net](const Tensor& a, const Tensor& b) {
        long long C = a.dim(0), H = a.dim(1), W = a.dim(2);
        Tensor t1(Shape{1, C, H, W}), t2(Shape{1, C, H, W});
        std::copy(a.data.begin(), a.data.end(), t1.data.begin());
        std::copy(b.data.begin(), b.data.end(), t2.data.begin());
        MantisOutputs out = net.forward(make_var(std::move(t1)), make_var(std::move(t2)));
        Tensor prob(Shape{H, W});
        for (long long i = 0; i < H * W; ++i)
            prob[i] = out.segmentation->value[1 * H * W + i];  // change class
        return prob;
    };
}

namespace detail {

// reflect-pad (C,H,W) on the bottom/right so the window grid covers every pixel
inline Tensor reflect_pad_br(const Tensor& img, long long pad_h, long long pad_w) {
    long long C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out(Shape{C, H + pad_h, W + pad_w});
    for (long long c = 0; c < C; ++c)
        for (long long y = 0; y < H + pad_h; ++y)
            for (long long x = 0; x < W + pad_w; ++x)
                out.at3(c, y, x) = img.at3(c, reflect_index(y, H), reflect_index(x, W));
    return out;
}

}  // namespace detail

// Average the change "probability" over all windows covering each pixel;
// reflect padding aligns the window grid so no pixel is missed.
inline Tensor sliding_inference(const WindowFn& fn, const Tensor& raster1, const Tensor& raster2,
                                const InferenceConfig& cfg) {
    cfg.validate();
    if (!shapes_equal(raster1.shape, raster2.shape))
        throw std::invalid_argument("sliding_inference: raster shape mismatch");
    if (raster1.rank() != 3) throw std::invalid_argument("sliding_inference: (C,H,W) rasters required");
    long long H = raster1.dim(1), W = raster1.dim(2), F = cfg.window;
    if (H < F || W < F)
        throw std::invalid_argument("sliding_inference: raster smaller than the inference window");
    long long pad_h = (H - F) % cfg.stride == 0 ? 0 : cfg.stride - (H - F) % cfg.stride;
    long long pad_w = (W - F) % cfg.stride == 0 ? 0 : cfg.stride - (W - F) % cfg.stride;
    Tensor r1 = pad_h || pad_w ? detail::reflect_pad_br(raster1, pad_h, pad_w) : raster1;
    Tensor r2 = pad_h || pad_w ? detail::reflect_pad_br(raster2, pad_h, pad_w) : raster2;
    long long Hp = H + pad_h, Wp = W + pad_w;
    long long C = raster1.dim(0);

    Tensor sum(Shape{Hp, Wp}, 0.0), count(Shape{Hp, Wp}, 0.0);
    for (auto [ox, oy] : extract_chips(Wp, Hp, F, cfg.stride)) {
        Tensor w1(Shape{C, F, F}), w2(Shape{C, F, F});
        for (long long c = 0; c < C; ++c)
            for (long long y = 0; y < F; ++y)
                for (long long x = 0; x < F; ++x) {
                    w1.at3(c, y, x) = r1.at3(c, oy + y, ox + x);
                    w2.at3(c, y, x) = r2.at3(c, oy + y, ox + x);
                }
        Tensor prob = fn(w1, w2);
        check_shape(prob, Shape{F, F}, "sliding_inference window output");
        for (long long y = 0; y < F; ++y)
            for (long long x = 0; x < F; ++x) {
                sum.at2(oy + y, ox + x) += prob.at2(y, x);
                count.at2(oy + y, ox + x) += 1.0;
            }
    }
    Tensor out(Shape{H, W});
    for (long long y = 0; y < H; ++y)
        for (long long x = 0; x < W; ++x) {
            double c = count.at2(y, x);
            if (c < 1.0) throw std::logic_error("sliding_inference: uncovered pixel");
            out.at2(y, x) = sum.at2(y, x) / c;
        }
    return out;
}

// Arithmetic mean of the per-checkpoint sliding-inference maps.
inline Tensor ensemble_inference(const std::vector<WindowFn>& fns, const Tensor& raster1,
                                 const Tensor& raster2, const InferenceConfig& cfg) {
    if (fns.empty()) throw std::invalid_argument("ensemble_inference: need at least one model");
    Tensor acc;
    for (const auto& fn : fns) {
        Tensor m = sliding_inference(fn, raster1, raster2, cfg);
        if (acc.size() == 0)
            acc = m;
        else
            for (long long i = 0; i < m.size(); ++i) acc[i] += m[i];
    }
    for (auto& v : acc.data) v /= static_cast<double>(fns.size());
    return acc;
}

inline Tensor threshold_mask(const Tensor& prob, double threshold) {
    Tensor out(prob.shape);
    for (long long i = 0; i < prob.size(); ++i) out[i] = prob[i] > threshold ? 1.0 : 0.0;
    return out;
}

struct ConfusionPalette {
    double tn[3] = {0.0, 0.0, 0.0};  // black
    double tp[3] = {1.0, 1.0, 1.0};  // white
    double fp[3] = {1.0, 0.0, 0.0};  // red
    double fn[3] = {0.0, 0.0, 1.0};  // blue
};

// Color-codes per-pixel confusion classes into an RGB image.
inline Tensor confusion_map(const Tensor& pred_mask, const Tensor& gt_mask,
                            const ConfusionPalette& palette = {}) {
    if (!shapes_equal(pred_mask.shape, gt_mask.shape))
        throw std::invalid_argument("confusion_map: shape mismatch");
    long long H = pred_mask.dim(0), W = pred_mask.dim(1);
    Tensor out(Shape{3, H, W});
    for (long long i = 0; i < H * W; ++i) {
        bool p = pred_mask[i] > 0.5, t = gt_mask[i] > 0.5;
        const double* c = p ? (t ? palette.tp : palette.fp) : (t ? palette.fn : palette.tn);
        for (long long ch = 0; ch < 3; ++ch) out.data[static_cast<size_t>(ch * H * W + i)] = c[ch];
    }
    return out;
}

// <FT>^d of a 2-vector probability point against ground truth l, closed form.
inline double landscape_value(double px, double py, double lx, double ly, int depth,
                              double smooth = 1e-5) {
    auto tanimoto = [&](double ax, double ay, double bx, double by, int d) {
        double pl = ax * bx + ay * by;
        double pp = ax * ax + ay * ay;
        double ll = bx * bx + by * by;
        double a = std::pow(2.0, d);
        double b = -(2.0 * a - 1.0);
        return (pl + smooth) / (a * (pp + ll) + b * pl + smooth);
    };
    int terms = std::max(depth, 1);
    double acc = 0.0;
    for (int i = 0; i < terms; ++i) {
        double direct = tanimoto(px, py, lx, ly, i);
        double comp = tanimoto(1.0 - px, 1.0 - py, 1.0 - lx, 1.0 - ly, i);
        acc += 0.5 * (direct + comp);
    }
    return acc / static_cast<double>(terms);
}

// CSV table of <FT>^d over the unit square: one row per (grid point, depth).
inline std::string landscape_emit(double lx, double ly, const std::vector<int>& depths,
                                  int grid_n, double smooth = 1e-5) {
    if (grid_n < 2) throw std::invalid_argument("landscape_emit: grid_n must be >= 2");
    if (!(lx >= 0.0 && lx <= 1.0 && ly >= 0.0 && ly <= 1.0))
        throw std::invalid_argument("landscape_emit: l entries must lie in [0,1]");
    std::ostringstream out;
    out.precision(12);
    out << "p_x,p_y,d,ft\n";
    for (int d : depths)
        for (int iy = 0; iy < grid_n; ++iy)
            for (int ix = 0; ix < grid_n; ++ix) {
                double px = static_cast<double>(ix) / (grid_n - 1);
                double py = static_cast<double>(iy) / (grid_n - 1);
                out << px << "," << py << "," << d << "," << landscape_value(px, py, lx, ly, d, smooth)
                    << "\n";
            }
    return out.str();
}

inline void write_raw_f32(const std::string& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    for (double v : t.data) {
        float f = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&f), sizeof f);
    }
    if (!out) throw std::runtime_error("write_raw_f32: write failed for " + path);
}

}  // namespace mantis
