#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mantis {

using Shape = std::vector<long long>;

inline long long numel(const Shape& s) {
    long long n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major tensor of doubles. Value semantics; safe to copy across threads.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), fill) {
        for (auto d : shape)
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim in " + shape_str(shape));
    }

    static Tensor scalar(double v) {
        Tensor t(Shape{1});
        t.data[0] = v;
        return t;
    }

    long long size() const { return static_cast<long long>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    long long dim(int i) const { return shape[static_cast<size_t>(i)]; }

    double& operator[](long long i) { return data[static_cast<size_t>(i)]; }
    double operator[](long long i) const { return data[static_cast<size_t>(i)]; }

    // rank-4 accessor (B,C,H,W)
    double& at4(long long b, long long c, long long y, long long x) {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
    }
    double at4(long long b, long long c, long long y, long long x) const {
        return data[static_cast<size_t>(((b * shape[1] + c) * shape[2] + y) * shape[3] + x)];
    }
    // rank-3 accessor (C,H,W)
    double& at3(long long c, long long y, long long x) {
        return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)];
    }
    double at3(long long c, long long y, long long x) const {
        return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)];
    }
    // rank-2 accessor (H,W)
    double& at2(long long y, long long x) { return data[static_cast<size_t>(y * shape[1] + x)]; }
    double at2(long long y, long long x) const { return data[static_cast<size_t>(y * shape[1] + x)]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double min() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::min(m, v);
        return m;
    }
    double max() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::max(m, v);
        return m;
    }
    double sum() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }
};

inline void check_shape(const Tensor& t, const Shape& expect, const char* what) {
    if (!shapes_equal(t.shape, expect))
        throw std::logic_error(std::string(what) + ": expected " + shape_str(expect) + ", got " +
                               shape_str(t.shape));
}

// Deterministic RNG (xoshiro256++ seeded by splitmix64). Identical streams on
// every platform, unlike the std distributions.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (int i = 0; i < 4; ++i) {
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s_[i] = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // inclusive range
    long long uniform_int(long long lo, long long hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo + 1);
        return lo + static_cast<long long>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline Tensor randn(const Shape& s, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    Tensor t(s);
    for (auto& v : t.data) v = mean + stddev * rng.normal();
    return t;
}

inline Tensor rand_uniform(const Shape& s, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(s);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace mantis
