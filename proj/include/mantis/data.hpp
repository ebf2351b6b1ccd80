#pragma once

#include <queue>

#include "mantis/tensor.hpp"

namespace mantis {

// Coregistered image pair with ground-truth change mask and derived targets.
// t1/t2 are (C,F,F) in [0,1]; mask/boundary are binary (F,F); distance is the
// per-component-normalized Euclidean distance transform in [0,1].
struct ChipPair {
    Tensor t1, t2;
    Tensor mask;
    Tensor distance;
    Tensor boundary;
    std::string name;
};

struct WindowOrigin {
    long long x = 0, y = 0;
};

// Sliding-window origins at multiples of `stride` such that windows fit;
// count per axis is floor((dim-F)/stride)+1.
inline std::vector<WindowOrigin> extract_chips(long long tile_w, long long tile_h, long long F,
                                               long long stride) {
    if (F > tile_w || F > tile_h)
        throw std::invalid_argument("extract_chips: window larger than tile");
    if (stride < 1) throw std::invalid_argument("extract_chips: stride must be >= 1");
    std::vector<WindowOrigin> out;
    for (long long y = 0; y + F <= tile_h; y += stride)
        for (long long x = 0; x + F <= tile_w; x += stride) out.push_back({x, y});
    return out;
}

struct Rect {
    long long x = 0, y = 0, w = 0, h = 0;
    long long area() const { return w * h; }
};

struct SplitRegions {
    Rect train;
    std::vector<Rect> val;  // complement of the train rectangle
};

// Train rectangle scaled by 0.6838 per side and anchored at the origin
// (~47% of the area); the validation region is the L-shaped complement.
inline SplitRegions split_train_val(long long tile_w, long long tile_h, long long min_side = 0) {
    constexpr double kSide = 0.6838;
    long long tw = static_cast<long long>(std::floor(kSide * static_cast<double>(tile_w)));
    long long th = static_cast<long long>(std::floor(kSide * static_cast<double>(tile_h)));
    if (tw < min_side || th < min_side)
        throw std::invalid_argument("split_train_val: train rectangle smaller than chip size");
    SplitRegions out;
    out.train = {0, 0, tw, th};
    if (tile_w > tw) out.val.push_back({tw, 0, tile_w - tw, tile_h});
    if (tile_h > th) out.val.push_back({0, th, tw, tile_h - th});
    return out;
}

namespace detail {

// 1D squared-distance transform (lower envelope of parabolas)
inline void edt1d(const std::vector<double>& f, std::vector<double>& d) {
    const double kInf = 1e20;
    int n = static_cast<int>(f.size());
    std::vector<int> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n + 1));
    int k = 0;
    v[0] = 0;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = 1; q < n; ++q) {
        double s;
        while (true) {
            int p = v[static_cast<size_t>(k)];
            s = ((f[static_cast<size_t>(q)] + q * q) - (f[static_cast<size_t>(p)] + p * p)) /
                (2.0 * q - 2.0 * p);
            if (s > z[static_cast<size_t>(k)]) break;
            --k;
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k + 1)] = kInf;
    }
    k = 0;
    d.resize(static_cast<size_t>(n));
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(k + 1)] < q) ++k;
        int p = v[static_cast<size_t>(k)];
        d[static_cast<size_t>(q)] = (q - p) * (q - p) + f[static_cast<size_t>(p)];
    }
}

// Euclidean distance to the nearest background pixel; the image border counts
// as background (one implicit zero ring).
inline Tensor edt_to_background(const Tensor& mask) {
    const double kInf = 1e20;
    long long H = mask.dim(0), W = mask.dim(1);
    long long Hp = H + 2, Wp = W + 2;
    std::vector<double> g(static_cast<size_t>(Hp * Wp), 0.0);
    for (long long y = 0; y < Hp; ++y) {
        std::vector<double> f(static_cast<size_t>(Wp));
        for (long long x = 0; x < Wp; ++x) {
            bool inside = y >= 1 && y <= H && x >= 1 && x <= W;
            bool fg = inside && mask.at2(y - 1, x - 1) > 0.5;
            f[static_cast<size_t>(x)] = fg ? kInf : 0.0;
        }
        std::vector<double> d;
        edt1d(f, d);
        for (long long x = 0; x < Wp; ++x) g[static_cast<size_t>(y * Wp + x)] = d[static_cast<size_t>(x)];
    }
    Tensor out(Shape{H, W});
    for (long long x = 0; x < Wp; ++x) {
        std::vector<double> f(static_cast<size_t>(Hp));
        for (long long y = 0; y < Hp; ++y) f[static_cast<size_t>(y)] = g[static_cast<size_t>(y * Wp + x)];
        std::vector<double> d;
        edt1d(f, d);
        for (long long y = 0; y < Hp; ++y)
            if (y >= 1 && y <= H && x >= 1 && x <= W)
                out.at2(y - 1, x - 1) = std::sqrt(d[static_cast<size_t>(y)]);
    }
    return out;
}

// 4-connected component labels; 0 marks background
inline std::vector<int> label_components(const Tensor& mask, int& count) {
    long long H = mask.dim(0), W = mask.dim(1);
    std::vector<int> labels(static_cast<size_t>(H * W), 0);
    count = 0;
    for (long long y = 0; y < H; ++y)
        for (long long x = 0; x < W; ++x) {
            if (mask.at2(y, x) <= 0.5 || labels[static_cast<size_t>(y * W + x)] != 0) continue;
            ++count;
            std::queue<std::pair<long long, long long>> q;
            q.push({y, x});
            labels[static_cast<size_t>(y * W + x)] = count;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop();
                const long long dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
                for (int i = 0; i < 4; ++i) {
                    long long ny = cy + dy[i], nx = cx + dx[i];
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    if (mask.at2(ny, nx) > 0.5 && labels[static_cast<size_t>(ny * W + nx)] == 0) {
                        labels[static_cast<size_t>(ny * W + nx)] = count;
                        q.push({ny, nx});
                    }
                }
            }
        }
    return labels;
}

}  // namespace detail

// Distance transform of the change mask, normalized to 1 at the deepest pixel
// of each connected component. Zero exactly where the mask is zero.
inline Tensor gen_distance_gt(const Tensor& mask) {
    if (mask.rank() != 2) throw std::invalid_argument("gen_distance_gt: rank-2 mask required");
    long long H = mask.dim(0), W = mask.dim(1);
    Tensor dist = detail::edt_to_background(mask);
    int ncomp = 0;
    auto labels = detail::label_components(mask, ncomp);
    std::vector<double> comp_max(static_cast<size_t>(ncomp + 1), 0.0);
    for (long long i = 0; i < H * W; ++i) {
        int l = labels[static_cast<size_t>(i)];
        if (l > 0) comp_max[static_cast<size_t>(l)] = std::max(comp_max[static_cast<size_t>(l)], dist[i]);
    }
    Tensor out(Shape{H, W}, 0.0);
    for (long long i = 0; i < H * W; ++i) {
        int l = labels[static_cast<size_t>(i)];
        if (l > 0 && comp_max[static_cast<size_t>(l)] > 0.0)
            out[i] = dist[i] / comp_max[static_cast<size_t>(l)];
    }
    return out;
}

// Inner boundary of the mask: pixels with a 4-neighbor outside the mask.
// Width w is produced by w erosions; the image border counts as background.
inline Tensor gen_boundary_gt(const Tensor& mask, int width = 1) {
    if (mask.rank() != 2) throw std::invalid_argument("gen_boundary_gt: rank-2 mask required");
    if (width < 1) throw std::invalid_argument("gen_boundary_gt: width must be >= 1");
    long long H = mask.dim(0), W = mask.dim(1);
    Tensor eroded = mask;
    for (int it = 0; it < width; ++it) {
        Tensor next(Shape{H, W}, 0.0);
        for (long long y = 0; y < H; ++y)
            for (long long x = 0; x < W; ++x) {
                if (eroded.at2(y, x) <= 0.5) continue;
                auto bg = [&](long long ny, long long nx) {
                    return ny < 0 || ny >= H || nx < 0 || nx >= W || eroded.at2(ny, nx) <= 0.5;
                };
                bool edge = bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1);
                next.at2(y, x) = edge ? 0.0 : 1.0;
            }
        eroded = next;
    }
    Tensor out(Shape{H, W}, 0.0);
    for (long long i = 0; i < H * W; ++i) out[i] = (mask[i] > 0.5 && eroded[i] <= 0.5) ? 1.0 : 0.0;
    return out;
}

struct AugmentConfig {
    double p_time_reversal = 0.5;
    double p_random_identity = 0.5;
    bool geometric = true;
    double rot_min_deg = 0.0, rot_max_deg = 360.0;
    double zoom_min = 0.8, zoom_max = 1.2;
    bool photometric = true;
    double brightness_min = 0.8, brightness_max = 1.2;
    int shadow_min = 1, shadow_max = 3;
    double shadow_factor = 0.5;
};

namespace detail {

// symmetric reflection without edge repetition ("reflect101")
inline long long reflect_index(long long i, long long n) {
    if (n == 1) return 0;
    long long period = 2 * (n - 1);
    long long j = std::llabs(i) % period;
    return j < n ? j : period - j;
}

struct AffineMap {
    // dst -> src
    double m00, m01, m10, m11, tx, ty;
    std::pair<double, double> apply(double x, double y) const {
        return {m00 * x + m01 * y + tx, m10 * x + m11 * y + ty};
    }
};

inline AffineMap rotation_zoom_about(double angle_deg, double zoom, double cx, double cy) {
    double a = angle_deg * 3.14159265358979323846 / 180.0;
    double c = std::cos(a), s = std::sin(a);
    // inverse mapping: rotate by -angle and scale by 1/zoom about the center
    double iz = 1.0 / zoom;
    AffineMap m{};
    m.m00 = c * iz;
    m.m01 = s * iz;
    m.m10 = -s * iz;
    m.m11 = c * iz;
    m.tx = cx - (m.m00 * cx + m.m01 * cy);
    m.ty = cy - (m.m10 * cx + m.m11 * cy);
    return m;
}

inline double sample_bilinear_reflect(const Tensor& plane, double sx, double sy) {
    long long H = plane.dim(0), W = plane.dim(1);
    long long x0 = static_cast<long long>(std::floor(sx)), y0 = static_cast<long long>(std::floor(sy));
    double wx = sx - static_cast<double>(x0), wy = sy - static_cast<double>(y0);
    auto at = [&](long long y, long long x) {
        return plane.at2(reflect_index(y, H), reflect_index(x, W));
    };
    return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
           wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
}

inline double sample_nearest_reflect(const Tensor& plane, double sx, double sy) {
    long long H = plane.dim(0), W = plane.dim(1);
    long long x = static_cast<long long>(std::llround(sx));
    long long y = static_cast<long long>(std::llround(sy));
    return plane.at2(reflect_index(y, H), reflect_index(x, W));
}

inline Tensor warp_plane(const Tensor& plane, const AffineMap& m, bool bilinear) {
    long long H = plane.dim(0), W = plane.dim(1);
    Tensor out(Shape{H, W});
    for (long long y = 0; y < H; ++y)
        for (long long x = 0; x < W; ++x) {
            auto [sx, sy] = m.apply(static_cast<double>(x), static_cast<double>(y));
            out.at2(y, x) = bilinear ? sample_bilinear_reflect(plane, sx, sy)
                                     : sample_nearest_reflect(plane, sx, sy);
        }
    return out;
}

inline Tensor warp_image(const Tensor& img, const AffineMap& m) {
    long long C = img.dim(0), H = img.dim(1), W = img.dim(2);
    Tensor out(Shape{C, H, W});
    for (long long c = 0; c < C; ++c) {
        Tensor plane(Shape{H, W});
        std::copy_n(&img.data[static_cast<size_t>(c * H * W)], H * W, plane.data.data());
        Tensor w = warp_plane(plane, m, true);
        std::copy_n(w.data.data(), H * W, &out.data[static_cast<size_t>(c * H * W)]);
    }
    return out;
}

struct Polygon {
    std::vector<std::pair<double, double>> pts;  // convex, counter-clockwise

    bool contains(double x, double y) const {
        size_t n = pts.size();
        for (size_t i = 0; i < n; ++i) {
            auto [x1, y1] = pts[i];
            auto [x2, y2] = pts[(i + 1) % n];
            if ((x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) < 0.0) return false;
        }
        return true;
    }
};

inline Polygon random_convex_polygon(Rng& rng, double w, double h) {
    double cx = rng.uniform(0.0, w), cy = rng.uniform(0.0, h);
    double radius = rng.uniform(w / 8.0, w / 3.0);
    int nvert = static_cast<int>(rng.uniform_int(3, 6));
    std::vector<double> angles(static_cast<size_t>(nvert));
    for (auto& a : angles) a = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    std::sort(angles.begin(), angles.end());
    Polygon poly;
    for (double a : angles)
        poly.pts.emplace_back(cx + radius * std::cos(a), cy + radius * std::sin(a));
    return poly;
}

inline void apply_shadows(Tensor& img, Rng& rng, const AugmentConfig& cfg) {
    long long C = img.dim(0), H = img.dim(1), W = img.dim(2);
    int count = static_cast<int>(rng.uniform_int(cfg.shadow_min, cfg.shadow_max));
    for (int s = 0; s < count; ++s) {
        Polygon poly = random_convex_polygon(rng, static_cast<double>(W), static_cast<double>(H));
        for (long long y = 0; y < H; ++y)
            for (long long x = 0; x < W; ++x)
                if (poly.contains(static_cast<double>(x), static_cast<double>(y)))
                    for (long long c = 0; c < C; ++c)
                        img.at3(c, y, x) *= cfg.shadow_factor;
    }
}

}  // namespace detail

// Geometric transforms hit every plane of the chip identically (bilinear for
// images, nearest for targets); photometric jitter hits the images only.
// Time reversal swaps the pair and keeps the mask; random identity duplicates
// one date and nulls all targets.
inline ChipPair augment(const ChipPair& chip, const AugmentConfig& cfg, Rng& rng) {
    ChipPair out = chip;
    long long H = chip.mask.dim(0), W = chip.mask.dim(1);
    if (cfg.geometric) {
        double angle = rng.uniform(cfg.rot_min_deg, cfg.rot_max_deg);
        double zoom = rng.uniform(cfg.zoom_min, cfg.zoom_max);
        double cx = rng.uniform(0.0, static_cast<double>(W - 1));
        double cy = rng.uniform(0.0, static_cast<double>(H - 1));
        auto m = detail::rotation_zoom_about(angle, zoom, cx, cy);
        out.t1 = detail::warp_image(out.t1, m);
        out.t2 = detail::warp_image(out.t2, m);
        out.mask = detail::warp_plane(out.mask, m, false);
        out.distance = detail::warp_plane(out.distance, m, false);
        out.boundary = detail::warp_plane(out.boundary, m, false);
    }
    if (cfg.photometric) {
        double b1 = rng.uniform(cfg.brightness_min, cfg.brightness_max);
        double b2 = rng.uniform(cfg.brightness_min, cfg.brightness_max);
        for (auto& v : out.t1.data) v = std::clamp(v * b1, 0.0, 1.0);
        for (auto& v : out.t2.data) v = std::clamp(v * b2, 0.0, 1.0);
        detail::apply_shadows(out.t1, rng, cfg);
        detail::apply_shadows(out.t2, rng, cfg);
    }
    if (rng.bernoulli(cfg.p_time_reversal)) std::swap(out.t1, out.t2);
    if (rng.bernoulli(cfg.p_random_identity)) {
        if (rng.bernoulli(0.5))
            out.t2 = out.t1;
        else
            out.t1 = out.t2;
        out.mask.fill(0.0);
        out.distance.fill(0.0);
        out.boundary.fill(0.0);
    }
    return out;
}

// Synthetic change-detection chips: textured axis-aligned rectangles
// ("buildings") on a noisy background; date 2 drops some and adds others.
// The mask is the symmetric difference of the two footprint unions.
struct SynthBuilding {
    Rect rect;
    bool in_t1 = false, in_t2 = false;
};

struct SynthChipInfo {
    std::vector<SynthBuilding> buildings;
};

inline uint64_t chip_stream_seed(uint64_t seed, uint64_t index) {
    return seed * 0x9e3779b97f4a7c15ULL + index * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL;
}

inline std::vector<ChipPair> synth_dataset(int n, long long F, uint64_t seed,
                                           std::vector<SynthChipInfo>* info_out = nullptr) {
    if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
    std::vector<ChipPair> chips;
    chips.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(chip_stream_seed(seed, static_cast<uint64_t>(i)));
        ChipPair chip;
        chip.name = "synth_" + std::to_string(i);
        chip.t1 = Tensor(Shape{3, F, F});
        chip.t2 = Tensor(Shape{3, F, F});
        double base[3];
        for (double& b : base) b = rng.uniform(0.15, 0.45);
        for (long long c = 0; c < 3; ++c)
            for (long long y = 0; y < F; ++y)
                for (long long x = 0; x < F; ++x) {
                    double v = base[c] + rng.uniform(-0.05, 0.05);
                    chip.t1.at3(c, y, x) = v;
                    chip.t2.at3(c, y, x) = std::clamp(v + rng.uniform(-0.02, 0.02), 0.0, 1.0);
                }
        SynthChipInfo info;
        auto add_building = [&](bool t1_only_coin) {
            SynthBuilding b;
            long long minside = std::max<long long>(4, F / 8), maxside = std::max<long long>(6, F / 3);
            b.rect.w = rng.uniform_int(minside, maxside);
            b.rect.h = rng.uniform_int(minside, maxside);
            b.rect.x = rng.uniform_int(0, F - b.rect.w);
            b.rect.y = rng.uniform_int(0, F - b.rect.h);
            if (t1_only_coin) {
                b.in_t1 = true;
                b.in_t2 = !rng.bernoulli(0.4);  // removed at date 2 with p=0.4
            } else {
                b.in_t1 = false;
                b.in_t2 = true;  // newly built
            }
            double color[3];
            for (double& c : color) c = rng.uniform(0.55, 0.95);
            for (long long y = b.rect.y; y < b.rect.y + b.rect.h; ++y)
                for (long long x = b.rect.x; x < b.rect.x + b.rect.w; ++x) {
                    double texture = ((x + y) % 4 < 2) ? 0.04 : -0.04;
                    for (long long c = 0; c < 3; ++c) {
                        double v = std::clamp(color[c] + texture, 0.0, 1.0);
                        if (b.in_t1) chip.t1.at3(c, y, x) = v;
                        if (b.in_t2) chip.t2.at3(c, y, x) = v;
                    }
                }
            info.buildings.push_back(b);
        };
        int n1 = static_cast<int>(rng.uniform_int(2, 4));
        for (int b = 0; b < n1; ++b) add_building(true);
        int n_new = static_cast<int>(rng.uniform_int(0, 2));
        for (int b = 0; b < n_new; ++b) add_building(false);

        Tensor f1(Shape{F, F}, 0.0), f2(Shape{F, F}, 0.0);
        for (const auto& b : info.buildings)
            for (long long y = b.rect.y; y < b.rect.y + b.rect.h; ++y)
                for (long long x = b.rect.x; x < b.rect.x + b.rect.w; ++x) {
                    if (b.in_t1) f1.at2(y, x) = 1.0;
                    if (b.in_t2) f2.at2(y, x) = 1.0;
                }
        chip.mask = Tensor(Shape{F, F});
        for (long long j = 0; j < F * F; ++j)
            chip.mask[j] = (f1[j] > 0.5) != (f2[j] > 0.5) ? 1.0 : 0.0;
        chip.distance = gen_distance_gt(chip.mask);
        chip.boundary = gen_boundary_gt(chip.mask);
        chips.push_back(std::move(chip));
        if (info_out) info_out->push_back(std::move(info));
    }
    return chips;
}

}  // namespace mantis
