#pragma once

#include "mantis/ftnmt.hpp"
#include "mantis/nn.hpp"

namespace mantis {

// Fractal Tanimoto over the spatial axes, one value per channel: (B,C,1,1).
inline Var spatial_similarity(const Var& q, const Var& k, double depth, double smooth = 1e-5) {
    return tanimoto_d(q, k, FTConfig{depth, {2, 3}, smooth});
}

// Fractal Tanimoto over the channel axis, one value per pixel: (B,1,H,W).
inline Var channel_similarity(const Var& q, const Var& k, double depth, double smooth = 1e-5) {
    return tanimoto_d(q, k, FTConfig{depth, {1}, smooth});
}

// L . (1 + gamma * A)
inline Var self_fusion(const Var& L, const Var& A, const Var& gamma) {
    if (!shapes_equal(L->value.shape, A->value.shape))
        throw std::invalid_argument("self_fusion: shape mismatch");
    return mul(L, affine(mul(gamma, A), 1.0, 1.0));
}

// Joint spatial+channel attention. Queries, keys and values are grouped
// normed-convolution projections squashed by a sigmoid; both similarity maps
// use the depth-averaged complemented form, are broadcast against the value
// projection and averaged, and the result passes through a trailing norm.
// Similarity intermediates stay (B,C,1,1) and (B,1,H,W).
class FracTALAttention {
public:
    FracTALAttention() = default;
    FracTALAttention(long long channels, int heads, int ft_depth, Rng& rng, double smooth = 1e-5)
        : channels_(channels), ft_depth_(ft_depth), smooth_(smooth),
          q_(channels, channels, 3, 1, 1, heads, rng),
          k_(channels, channels, 3, 1, 1, heads, rng),
          v_(channels, channels, 3, 1, 1, heads, rng),
          norm_(channels) {
        if (channels % heads != 0)
            throw std::invalid_argument("FracTALAttention: heads must divide channels");
    }

    Var forward(const Var& q_in, const Var& k_in, const Var& v_in) const {
        if (q_in->value.dim(1) != channels_)
            throw std::invalid_argument("FracTALAttention: channel mismatch, expected " +
                                        std::to_string(channels_));
        Var pre = forward_pre_norm(q_in, k_in, v_in);
        return norm_.forward(pre);
    }

    // output before the trailing normalization; bounded by max |v| since both
    // similarity maps lie in [0,1]
    Var forward_pre_norm(const Var& q_in, const Var& k_in, const Var& v_in) const {
        Var q = sigmoid(q_.forward(q_in));
        Var k = sigmoid(k_.forward(k_in));
        Var v = sigmoid(v_.forward(v_in));
        auto [sim_spat, sim_chan] = ftnmt_avg_dual(q, k, {2, 3}, {1}, ft_depth_, smooth_);
        return lincomb(0.5, mul(sim_spat, v), 0.5, mul(sim_chan, v));
    }

    void params(ParamRefs& out, const std::string& prefix) {
        q_.params(out, prefix + ".q");
        k_.params(out, prefix + ".k");
        v_.params(out, prefix + ".v");
        norm_.params(out, prefix + ".norm");
    }

    long long channels() const { return channels_; }
    const Conv2DN& q_proj() const { return q_; }
    const Conv2DN& k_proj() const { return k_; }
    const Conv2DN& v_proj() const { return v_; }
    const GroupNorm& out_norm() const { return norm_; }
    int ft_depth() const { return ft_depth_; }

private:
    long long channels_ = 0;
    int ft_depth_ = 5;
    double smooth_ = 1e-5;
    Conv2DN q_, k_, v_;
    GroupNorm norm_;
};

// Relative attention fusion of two same-shape layers:
//   F1 = L1 . (1 + g1 * Att(q(L1), k(L2), v(L2)))
//   F2 = L2 . (1 + g2 * Att(q(L2), k(L1), v(L1)))
//   out = Conv2DN(concat(F1, F2))
// With both gammas at their zero init this reduces exactly to the plain
// concat+conv path, which is also the ablated mode.
class RelativeFusion {
public:
    RelativeFusion() = default;
    RelativeFusion(long long channels, int heads, int ft_depth, Rng& rng, double smooth = 1e-5)
        : att12_(channels, heads, ft_depth, rng, smooth),
          att21_(channels, heads, ft_depth, rng, smooth),
          gamma1_(Tensor(Shape{1}, 0.0)), gamma2_(Tensor(Shape{1}, 0.0)),
          fuse_(2 * channels, channels, 3, 1, 1, heads, rng) {}

    Var forward(const Var& L1, const Var& L2) const {
        if (!shapes_equal(L1->value.shape, L2->value.shape))
            throw std::invalid_argument("RelativeFusion: shape mismatch");
        Var f1 = L1, f2 = L2;
        if (attention_enabled) {
            f1 = self_fusion(L1, att12_.forward(L1, L2, L2), gamma1_.var());
            f2 = self_fusion(L2, att21_.forward(L2, L1, L1), gamma2_.var());
        }
        return fuse_.forward(concat({f1, f2}, 1));
    }

    void params(ParamRefs& out, const std::string& prefix) {
        att12_.params(out, prefix + ".att12");
        att21_.params(out, prefix + ".att21");
        add_param(out, prefix + ".gamma1", gamma1_);
        add_param(out, prefix + ".gamma2", gamma2_);
        fuse_.params(out, prefix + ".fuse");
    }

    Parameter& gamma1() { return gamma1_; }
    Parameter& gamma2() { return gamma2_; }
    const FracTALAttention& att12() const { return att12_; }
    const FracTALAttention& att21() const { return att21_; }
    const Conv2DN& fuse() const { return fuse_; }

    bool attention_enabled = true;

private:
    FracTALAttention att12_, att21_;
    Parameter gamma1_, gamma2_;
    Conv2DN fuse_;
};

}  // namespace mantis
