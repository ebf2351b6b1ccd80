#pragma once

#include <array>
#include <memory>

#include "mantis/attention.hpp"

namespace mantis {

enum class UnitVariant { FractalResNet, CEECNetV1, CEECNetV2 };

inline const char* unit_variant_name(UnitVariant v) {
    switch (v) {
        case UnitVariant::FractalResNet: return "fractal_resnet";
        case UnitVariant::CEECNetV1: return "ceecnet_v1";
        case UnitVariant::CEECNetV2: return "ceecnet_v2";
    }
    return "?";
}

inline UnitVariant unit_variant_from_name(const std::string& s) {
    if (s == "fractal_resnet") return UnitVariant::FractalResNet;
    if (s == "ceecnet_v1") return UnitVariant::CEECNetV1;
    if (s == "ceecnet_v2") return UnitVariant::CEECNetV2;
    throw std::invalid_argument("unknown unit variant: " + s);
}

// heads per unit follow the nf/8 pattern
inline int heads_for(long long nf) { return static_cast<int>(std::max<long long>(1, nf / 8)); }

// Pre-activation residual body: Norm, ReLU, Conv k3 p1, Norm, ReLU, Conv k3 p1.
class ResBlock {
public:
    ResBlock() = default;
    ResBlock(long long channels, Rng& rng)
        : n1_(channels), n2_(channels),
          c1_(channels, channels, 3, 1, 1, 1, true, rng),
          c2_(channels, channels, 3, 1, 1, 1, true, rng) {}

    Var forward(const Var& x) const { return c2_.forward(relu(n2_.forward(c1_.forward(relu(n1_.forward(x)))))); }

    void params(ParamRefs& out, const std::string& prefix) {
        n1_.params(out, prefix + ".norm1");
        c1_.params(out, prefix + ".conv1");
        n2_.params(out, prefix + ".norm2");
        c2_.params(out, prefix + ".conv2");
    }

private:
    GroupNorm n1_, n2_;
    Conv2D c1_, c2_;
};

struct UnitBase {
    virtual ~UnitBase() = default;
    virtual Var forward(const Var& x) const = 0;
    virtual void params(ParamRefs& out, const std::string& prefix) = 0;
    bool attention_enabled = true;
};

// out = (input + ResBlock(input)) . (1 + gamma * Att(input, input, input))
class FracTALResNetUnit : public UnitBase {
public:
    FracTALResNetUnit(long long nf, int heads, int ft_depth, Rng& rng, double smooth = 1e-5)
        : nf_(nf), res_(nf, rng), att_(nf, heads, ft_depth, rng, smooth), gamma_(Tensor(Shape{1}, 0.0)) {}

    Var forward(const Var& x) const override {
        if (x->value.dim(1) != nf_)
            throw std::invalid_argument("FracTALResNetUnit: channel mismatch");
        Var base = add(x, res_.forward(x));
        if (!attention_enabled) return base;
        return self_fusion(base, att_.forward(x, x, x), gamma_.var());
    }

    void params(ParamRefs& out, const std::string& prefix) override {
        res_.params(out, prefix + ".res");
        att_.params(out, prefix + ".att");
        add_param(out, prefix + ".gamma", gamma_);
    }

    Parameter& gamma() { return gamma_; }
    const ResBlock& res() const { return res_; }
    const FracTALAttention& attention() const { return att_; }

private:
    long long nf_ = 0;
    ResBlock res_;
    FracTALAttention att_;
    Parameter gamma_;
};

// Two normed convolutions, the first with stride 2; ReLU after each stage.
class Compress {
public:
    Compress() = default;
    Compress(long long in_ch, long long out_ch, Rng& rng)
        : c1_(in_ch, out_ch, 3, 1, 2, 1, rng), c2_(out_ch, out_ch, 3, 1, 1, 1, rng) {}

    Var forward(const Var& x) const {
        if (x->value.dim(2) % 2 != 0 || x->value.dim(3) % 2 != 0)
            throw std::invalid_argument("Compress: spatial dims must be even");
        return relu(c2_.forward(relu(c1_.forward(x))));
    }

    void params(ParamRefs& out, const std::string& prefix) {
        c1_.params(out, prefix + ".conv1");
        c2_.params(out, prefix + ".conv2");
    }

private:
    Conv2DN c1_, c2_;
};

// Bilinear x2 followed by two normed convolutions with ReLU.
class Expand {
public:
    Expand() = default;
    Expand(long long in_ch, long long out_ch, int heads, Rng& rng)
        : c1_(in_ch, out_ch, 3, 1, 1, heads, rng), c2_(out_ch, out_ch, 3, 1, 1, heads, rng) {}

    Var forward(const Var& x) const { return relu(c2_.forward(relu(c1_.forward(bilinear_up2(x))))); }

    void params(ParamRefs& out, const std::string& prefix) {
        c1_.params(out, prefix + ".conv1");
        c2_.params(out, prefix + ".conv2");
    }

private:
    Conv2DN c1_, c2_;
};

// Upsample the low-resolution input, convolve, then merge with the skip:
// concat+conv for V1, relative fusion for V2. ReLU closes both paths.
class ExpandNCombine {
public:
    ExpandNCombine() = default;
    ExpandNCombine(long long in_ch, long long out_ch, int heads, int ft_depth, bool fusion_merge,
                   Rng& rng, double smooth = 1e-5)
        : out_ch_(out_ch), fusion_merge_(fusion_merge),
          c1_(in_ch, out_ch, 3, 1, 1, heads, rng) {
        if (fusion_merge_)
            fuse_ = std::make_unique<RelativeFusion>(out_ch, heads, ft_depth, rng, smooth);
        else
            c2_ = Conv2DN(2 * out_ch, out_ch, 3, 1, 1, heads, rng);
    }

    Var forward(const Var& low, const Var& skip) const {
        Var up = relu(c1_.forward(bilinear_up2(low)));
        if (skip->value.dim(1) != out_ch_ || skip->value.dim(2) != up->value.dim(2) ||
            skip->value.dim(3) != up->value.dim(3))
            throw std::invalid_argument("ExpandNCombine: skip shape mismatch after upsample");
        if (fusion_merge_) return relu(fuse_->forward(up, skip));
        return relu(c2_.forward(concat({up, skip}, 1)));
    }

    void params(ParamRefs& out, const std::string& prefix) {
        c1_.params(out, prefix + ".conv1");
        if (fusion_merge_)
            fuse_->params(out, prefix + ".fusion");
        else
            c2_.params(out, prefix + ".conv2");
    }

    void set_attention_enabled(bool on) {
        if (fuse_) fuse_->attention_enabled = on;
    }

private:
    long long out_ch_ = 0;
    bool fusion_merge_ = false;
    Conv2DN c1_, c2_;
    std::unique_ptr<RelativeFusion> fuse_;
};

// Compress-Expand / Expand-Compress unit. The CE branch summarizes at half
// the input volume, the EC branch analyzes at double the volume; the two views
// exchange information through relative attention and the collected output is
// fused with self attention on the input. V2 swaps the branch-internal
// concat+conv merges for relative fusion.
class CEECNetUnit : public UnitBase {
public:
    CEECNetUnit(long long nf, int heads, int ft_depth, UnitVariant variant, Rng& rng,
                double smooth = 1e-5)
        : nf_(nf), v2_(variant == UnitVariant::CEECNetV2),
          conv1_(nf, nf / 2, 3, 1, 1, 1, rng),
          compr11_(nf / 2, nf, 3, 1, 2, 1, rng),
          compr12_(nf, nf, 3, 1, 1, 1, rng),
          expand1_(nf, nf / 2, heads, ft_depth, v2_, rng, smooth),
          conv2_(nf, nf / 2, 3, 1, 1, 1, rng),
          expand2_(nf / 2, nf / 4, heads, rng),
          compr21_(nf / 4, nf / 2, 3, 1, 2, 1, rng),
          collect_(nf, nf, 3, 1, 1, 1, rng),
          att_(nf, heads, ft_depth, rng, smooth),
          ratt12_(nf / 2, heads, ft_depth, rng, smooth),
          ratt21_(nf / 2, heads, ft_depth, rng, smooth),
          gamma1_(Tensor(Shape{1}, 0.0)), gamma2_(Tensor(Shape{1}, 0.0)),
          gamma3_(Tensor(Shape{1}, 0.0)) {
        if (nf % 4 != 0) throw std::invalid_argument("CEECNetUnit: nf must be divisible by 4");
        if (v2_)
            fuse22_ = std::make_unique<RelativeFusion>(nf / 2, heads, ft_depth, rng, smooth);
        else
            compr22_ = Conv2DN(nf, nf / 2, 3, 1, 1, 1, rng);
    }

    Var forward(const Var& x) const override {
        long long B = x->value.dim(0), H = x->value.dim(2), W = x->value.dim(3);
        if (x->value.dim(1) != nf_) throw std::invalid_argument("CEECNetUnit: channel mismatch");
        if (H % 2 != 0 || W % 2 != 0)
            throw std::invalid_argument("CEECNetUnit: spatial dims must be even");

        // CE branch: half the volume, then restore
        Var out10 = conv1_.forward(x);
        check_shape(out10->value, Shape{B, nf_ / 2, H, W}, "CEECNetUnit out10");
        Var out1 = relu(compr11_.forward(out10));
        out1 = relu(compr12_.forward(out1));
        check_shape(out1->value, Shape{B, nf_, H / 2, W / 2}, "CEECNetUnit CE bottom");
        out1 = expand1_.forward(out1, out10);
        check_shape(out1->value, Shape{B, nf_ / 2, H, W}, "CEECNetUnit CE out");

        // EC branch: double the volume, then compress back
        Var out20 = conv2_.forward(x);
        check_shape(out20->value, Shape{B, nf_ / 2, H, W}, "CEECNetUnit out20");
        Var out2 = expand2_.forward(out20);
        check_shape(out2->value, Shape{B, nf_ / 4, 2 * H, 2 * W}, "CEECNetUnit EC top");
        out2 = relu(compr21_.forward(out2));
        check_shape(out2->value, Shape{B, nf_ / 2, H, W}, "CEECNetUnit EC compressed");
        if (v2_)
            out2 = relu(fuse22_->forward(out2, out20));
        else
            out2 = relu(compr22_.forward(concat({out2, out20}, 1)));
        check_shape(out2->value, Shape{B, nf_ / 2, H, W}, "CEECNetUnit EC out");

        Var out122 = out1, out211 = out2;
        if (attention_enabled) {
            out122 = self_fusion(out1, ratt12_.forward(out1, out2, out2), gamma2_.var());
            out211 = self_fusion(out2, ratt21_.forward(out2, out1, out1), gamma3_.var());
        }
        Var out12 = relu(collect_.forward(concat({out122, out211}, 1)));
        check_shape(out12->value, Shape{B, nf_, H, W}, "CEECNetUnit collect");

        Var base = add(x, out12);
        if (!attention_enabled) return base;
        return self_fusion(base, att_.forward(x, x, x), gamma1_.var());
    }

    void params(ParamRefs& out, const std::string& prefix) override {
        conv1_.params(out, prefix + ".conv1");
        compr11_.params(out, prefix + ".compr11");
        compr12_.params(out, prefix + ".compr12");
        expand1_.params(out, prefix + ".expand1");
        conv2_.params(out, prefix + ".conv2");
        expand2_.params(out, prefix + ".expand2");
        compr21_.params(out, prefix + ".compr21");
        if (v2_)
            fuse22_->params(out, prefix + ".fuse22");
        else
            compr22_.params(out, prefix + ".compr22");
        collect_.params(out, prefix + ".collect");
        att_.params(out, prefix + ".att");
        ratt12_.params(out, prefix + ".ratt12");
        ratt21_.params(out, prefix + ".ratt21");
        add_param(out, prefix + ".gamma1", gamma1_);
        add_param(out, prefix + ".gamma2", gamma2_);
        add_param(out, prefix + ".gamma3", gamma3_);
    }

    void set_attention_enabled(bool on) {
        attention_enabled = on;
        expand1_.set_attention_enabled(on);
        if (fuse22_) fuse22_->attention_enabled = on;
    }

private:
    long long nf_ = 0;
    bool v2_ = false;
    Conv2DN conv1_, compr11_, compr12_;
    ExpandNCombine expand1_;
    Conv2DN conv2_;
    Expand expand2_;
    Conv2DN compr21_, compr22_, collect_;
    std::unique_ptr<RelativeFusion> fuse22_;
    FracTALAttention att_, ratt12_, ratt21_;
    Parameter gamma1_, gamma2_, gamma3_;
};

inline std::unique_ptr<UnitBase> make_unit(UnitVariant variant, long long nf, int heads, int ft_depth,
                                           Rng& rng, double smooth = 1e-5) {
    if (variant == UnitVariant::FractalResNet)
        return std::make_unique<FracTALResNetUnit>(nf, heads, ft_depth, rng, smooth);
    return std::make_unique<CEECNetUnit>(nf, heads, ft_depth, variant, rng, smooth);
}

inline void unit_set_attention(UnitBase& u, bool on) {
    if (auto* c = dynamic_cast<CEECNetUnit*>(&u))
        c->set_attention_enabled(on);
    else
        u.attention_enabled = on;
}

// Stride-2 normed convolution without activation.
class DownscaleTransition {
public:
    DownscaleTransition() = default;
    DownscaleTransition(long long in_ch, long long out_ch, Rng& rng)
        : conv_(in_ch, out_ch, 3, 1, 2, 1, rng) {}

    Var forward(const Var& x) const {
        if (x->value.dim(2) % 2 != 0 || x->value.dim(3) % 2 != 0)
            throw std::invalid_argument("DownscaleTransition: spatial dims must be even");
        return conv_.forward(x);
    }

    void params(ParamRefs& out, const std::string& prefix) { conv_.params(out, prefix + ".conv"); }

private:
    Conv2DN conv_;
};

// Four max-pool pyramids at window fractions {1, 1/2, 1/4, 1/8} of the
// spatial extent, each nearest-upsampled back and reduced to C/4 channels,
// concatenated, then bound by a final normed convolution to C channels.
class PSPPooling {
public:
    PSPPooling() = default;
    PSPPooling(long long channels, Rng& rng) : channels_(channels) {
        if (channels % 4 != 0) throw std::invalid_argument("PSPPooling: channels must be divisible by 4");
        for (int i = 0; i < 4; ++i) branch_[i] = Conv2DN(channels, channels / 4, 1, 0, 1, 1, rng);
        final_ = Conv2DN(channels, channels, 1, 0, 1, 1, rng);
    }

    Var forward(const Var& x) const {
        long long H = x->value.dim(2), W = x->value.dim(3);
        if (H % 8 != 0 || W % 8 != 0)
            throw std::invalid_argument("PSPPooling: spatial dims must be divisible by 8");
        std::vector<Var> levels;
        for (int k = 0; k < 4; ++k) {
            int wy = static_cast<int>(H >> k), wx = static_cast<int>(W >> k);
            Var pooled = maxpool2d(x, wy, wx);
            Var up = nearest_up(pooled, wy, wx);
            levels.push_back(branch_[static_cast<size_t>(k)].forward(up));
        }
        return final_.forward(concat(levels, 1));
    }

    void params(ParamRefs& out, const std::string& prefix) {
        for (int i = 0; i < 4; ++i) branch_[static_cast<size_t>(i)].params(out, prefix + ".branch" + std::to_string(i));
        final_.params(out, prefix + ".final");
    }

private:
    long long channels_ = 0;
    std::array<Conv2DN, 4> branch_;
    Conv2DN final_;
};

}  // namespace mantis
