#pragma once

#include "mantis/blocks.hpp"

namespace mantis {

struct MantisConfig {
    int depth = 4;          // encoder stages
    int nf = 8;             // filters at full resolution
    UnitVariant variant = UnitVariant::FractalResNet;
    int ft_depth = 5;       // fractal Tanimoto depth inside attention
    int num_classes = 2;
    int in_channels = 3;
    double smooth = 1e-5;
    uint64_t seed = 42;

    long long stage_channels(int stage) const { return static_cast<long long>(nf) << stage; }

    void validate() const {
        if (depth < 2) throw std::invalid_argument("MantisConfig: depth must be >= 2");
        if (nf < 4) throw std::invalid_argument("MantisConfig: nf must be >= 4");
        if (num_classes < 2) throw std::invalid_argument("MantisConfig: num_classes must be >= 2");
    }

    // minimum input side: divisible by 2^(depth-1) and by 8 at the bottleneck
    long long min_input_side() const { return (1LL << (depth - 1)) * 8; }
};

// sigmoid(x / clamp(gamma, eps, 1))
inline Var crisp_sigmoid(const Var& x, const Var& gamma, double eps = 1e-2) {
    return sigmoid(div(x, clampv(gamma, eps, 1.0)));
}

struct MantisOutputs {
    Var distance;      // (B,1,H,W) in [0,1]
    Var boundary;      // (B,1,H,W) in [0,1]
    Var segmentation;  // (B,num_classes,H,W), softmax over classes
};

// One task branch of the conditioned multitasking head: two normed
// convolutions with ReLU, then a plain 1x1 convolution to the task logits.
class HeadBranch {
public:
    HeadBranch() = default;
    HeadBranch(long long in_ch, long long mid_ch, long long out_ch, Rng& rng)
        : c1_(in_ch, mid_ch, 3, 1, 1, 1, rng), c2_(mid_ch, mid_ch, 3, 1, 1, 1, rng),
          logits_(mid_ch, out_ch, 1, 0, 1, 1, true, rng) {}

    Var forward(const Var& x) const { return logits_.forward(relu(c2_.forward(relu(c1_.forward(x))))); }

    void params(ParamRefs& out, const std::string& prefix) {
        c1_.params(out, prefix + ".conv1");
        c2_.params(out, prefix + ".conv2");
        logits_.params(out, prefix + ".logits");
    }

    Conv2D& logits() { return logits_; }

private:
    Conv2DN c1_, c2_;
    Conv2D logits_;
};

// Conditioned multitasking head: distance transform first, boundaries next
// (crisp sigmoid with a learned scale), change segmentation last. Earlier
// predictions are channel-balanced and re-used by the later tasks.
class SegmentationHead {
public:
    SegmentationHead() = default;
    SegmentationHead(long long nf, int num_classes, Rng& rng)
        : nf_(nf),
          distance_(2 * nf, nf, 1, rng),
          boundary_(3 * nf, nf, 1, rng),
          segmentation_(4 * nf, nf, num_classes, rng),
          balance_dist_(1, nf, 3, 1, 1, 1, rng),
          balance_bound_(1, nf, 3, 1, 1, 1, rng),
          gamma_sigmoid_(Tensor(Shape{1}, 1.0)) {}

    MantisOutputs forward(const Var& features, const Var& first_fused) const {
        Var f = concat({features, first_fused}, 1);
        Var dist = sigmoid(distance_.forward(f));
        Var bal_d = balance_dist_.forward(dist);
        Var bound = crisp_sigmoid(boundary_.forward(concat({f, bal_d}, 1)), gamma_sigmoid_.var(), gamma_eps_);
        Var seg_in = concat({f, bal_d, balance_bound_.forward(bound)}, 1);
        Var seg = softmax(segmentation_.forward(seg_in), 1);
        return {dist, bound, seg};
    }

    void params(ParamRefs& out, const std::string& prefix) {
        distance_.params(out, prefix + ".distance");
        boundary_.params(out, prefix + ".boundary");
        segmentation_.params(out, prefix + ".segmentation");
        balance_dist_.params(out, prefix + ".balance_dist");
        balance_bound_.params(out, prefix + ".balance_bound");
        add_param(out, prefix + ".gamma_sigmoid", gamma_sigmoid_);
    }

    Parameter& gamma_sigmoid() { return gamma_sigmoid_; }
    double effective_gamma() const {
        return std::clamp(gamma_sigmoid_.value()[0], gamma_eps_, 1.0);
    }

    HeadBranch& distance_branch() { return distance_; }
    HeadBranch& boundary_branch() { return boundary_; }
    HeadBranch& segmentation_branch() { return segmentation_; }

private:
    long long nf_ = 0;
    double gamma_eps_ = 1e-2;
    HeadBranch distance_, boundary_, segmentation_;
    Conv2DN balance_dist_, balance_bound_;
    Parameter gamma_sigmoid_;
};

// Dual shared-weight encoder, per-depth relative fusion skips, PSP bottleneck,
// single decoder. Shape bookkeeping is asserted at every stage.
class MantisNet {
public:
    explicit MantisNet(const MantisConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(cfg_.seed);
        int D = cfg_.depth;
        stem_ = Conv2DN(cfg_.in_channels, cfg_.nf, 3, 1, 1, 1, rng);
        for (int i = 0; i < D; ++i) {
            long long ch = cfg_.stage_channels(i);
            enc_units_.push_back(make_unit(cfg_.variant, ch, heads_for(ch), cfg_.ft_depth, rng, cfg_.smooth));
            // fused skips feed the decoder; the deepest pair reaches the
            // bottleneck through concat+conv instead
            if (i < D - 1)
                fusions_.emplace_back(std::make_unique<RelativeFusion>(ch, heads_for(ch), cfg_.ft_depth, rng, cfg_.smooth));
            if (i > 0) down_.emplace_back(cfg_.stage_channels(i - 1), ch, rng);
        }
        long long deep = cfg_.stage_channels(D - 1);
        bottleneck_conv_ = Conv2DN(2 * deep, deep, 3, 1, 1, 1, rng);
        psp_ = PSPPooling(deep, rng);
        for (int i = D - 2; i >= 0; --i) {
            long long ch = cfg_.stage_channels(i);
            dec_combine_.emplace_back(3 * ch, ch, 3, 1, 1, 1, rng);
            dec_units_.push_back(make_unit(cfg_.variant, ch, heads_for(ch), cfg_.ft_depth, rng, cfg_.smooth));
        }
        head_ = SegmentationHead(cfg_.nf, cfg_.num_classes, rng);
    }

    const MantisConfig& config() const { return cfg_; }

    void set_attention_enabled(bool on) {
        attention_enabled_ = on;
        for (auto& u : enc_units_) unit_set_attention(*u, on);
        for (auto& u : dec_units_) unit_set_attention(*u, on);
        for (auto& f : fusions_) f->attention_enabled = on;
    }
    bool attention_enabled() const { return attention_enabled_; }

    struct Features {
        Var final_features;  // (B, nf, H, W)
        Var first_fused;     // (B, nf, H, W)
        std::vector<Var> branch1, branch2;  // per-stage encoder outputs
    };

    Features features(const Var& img1, const Var& img2) const {
        if (!shapes_equal(img1->value.shape, img2->value.shape))
            throw std::invalid_argument("MantisNet: input shape mismatch");
        long long B = img1->value.dim(0), H = img1->value.dim(2), W = img1->value.dim(3);
        if (img1->value.dim(1) != cfg_.in_channels)
            throw std::invalid_argument("MantisNet: input channel mismatch");
        long long div = 1LL << (cfg_.depth - 1);
        if (H % div != 0 || W % div != 0 || (H / div) % 8 != 0 || (W / div) % 8 != 0)
            throw std::invalid_argument("MantisNet: input side must be divisible by 2^(D-1) and by 8 at the bottleneck");

        int D = cfg_.depth;
        Features out;
        std::vector<Var> fused(static_cast<size_t>(D));
        Var e1 = stem_.forward(img1);
        Var e2 = stem_.forward(img2);
        for (int i = 0; i < D; ++i) {
            long long ch = cfg_.stage_channels(i);
            long long hs = H >> i, ws = W >> i;
            if (i > 0) {
                e1 = down_[static_cast<size_t>(i - 1)].forward(e1);
                e2 = down_[static_cast<size_t>(i - 1)].forward(e2);
            }
            e1 = enc_units_[static_cast<size_t>(i)]->forward(e1);
            e2 = enc_units_[static_cast<size_t>(i)]->forward(e2);
            check_shape(e1->value, Shape{B, ch, hs, ws}, "MantisNet encoder stage");
            check_shape(e2->value, Shape{B, ch, hs, ws}, "MantisNet encoder stage");
            fused[static_cast<size_t>(i)] = fusions_[static_cast<size_t>(i)]->forward(e1, e2);
            check_shape(fused[static_cast<size_t>(i)]->value, Shape{B, ch, hs, ws}, "MantisNet fused skip");
            out.branch1.push_back(e1);
            out.branch2.push_back(e2);
        }

        long long deep = cfg_.stage_channels(D - 1);
        Var mid = bottleneck_conv_.forward(concat({e1, e2}, 1));
        check_shape(mid->value, Shape{B, deep, H >> (D - 1), W >> (D - 1)}, "MantisNet bottleneck");
        mid = psp_.forward(mid);
        check_shape(mid->value, Shape{B, deep, H >> (D - 1), W >> (D - 1)}, "MantisNet psp");

        Var dec = mid;
        for (int s = 0; s < D - 1; ++s) {
            int i = D - 2 - s;  // target stage
            long long ch = cfg_.stage_channels(i);
            long long hs = H >> i, ws = W >> i;
            Var up = bilinear_up2(dec);
            dec = dec_combine_[static_cast<size_t>(s)].forward(concat({up, fused[static_cast<size_t>(i)]}, 1));
            dec = dec_units_[static_cast<size_t>(s)]->forward(dec);
            check_shape(dec->value, Shape{B, ch, hs, ws}, "MantisNet decoder stage");
        }
        out.final_features = dec;
        out.first_fused = fused[0];
        return out;
    }

    MantisOutputs forward(const Var& img1, const Var& img2) const {
        Features f = features(img1, img2);
        return head_.forward(f.final_features, f.first_fused);
    }

    void params(ParamRefs& out) {
        stem_.params(out, "stem");
        for (size_t i = 0; i < enc_units_.size(); ++i)
            enc_units_[i]->params(out, "encoder.stage" + std::to_string(i) + ".unit");
        for (size_t i = 0; i < down_.size(); ++i)
            down_[i].params(out, "encoder.down" + std::to_string(i + 1));
        for (size_t i = 0; i < fusions_.size(); ++i)
            fusions_[i]->params(out, "fusion.stage" + std::to_string(i));
        bottleneck_conv_.params(out, "bottleneck.conv");
        psp_.params(out, "bottleneck.psp");
        for (size_t i = 0; i < dec_units_.size(); ++i) {
            dec_combine_[i].params(out, "decoder.step" + std::to_string(i) + ".combine");
            dec_units_[i]->params(out, "decoder.step" + std::to_string(i) + ".unit");
        }
        head_.params(out, "head");
    }

    SegmentationHead& head() { return head_; }

private:
    MantisConfig cfg_;
    bool attention_enabled_ = true;
    Conv2DN stem_;
    std::vector<std::unique_ptr<UnitBase>> enc_units_;
    std::vector<DownscaleTransition> down_;
    std::vector<std::unique_ptr<RelativeFusion>> fusions_;
    Conv2DN bottleneck_conv_;
    PSPPooling psp_;
    std::vector<Conv2DN> dec_combine_;
    std::vector<std::unique_ptr<UnitBase>> dec_units_;
    SegmentationHead head_;
};

// Shannon entropy (bits) of the feature-value histogram. Values are min-max
// normalized to [-1,1] per channel plane before binning.
inline double feature_entropy(const Tensor& features, int bins = 256) {
    if (bins < 2) throw std::invalid_argument("feature_entropy: bins must be >= 2");
    if (features.size() == 0) throw std::invalid_argument("feature_entropy: empty tensor");
    long long planes = 1, plane_size = features.size();
    if (features.rank() >= 3) {
        plane_size = features.dim(features.rank() - 1) * features.dim(features.rank() - 2);
        planes = features.size() / plane_size;
    } else if (features.rank() == 2) {
        planes = features.dim(0);
        plane_size = features.dim(1);
    }
    std::vector<long long> hist(static_cast<size_t>(bins), 0);
    for (long long p = 0; p < planes; ++p) {
        const double* v = &features.data[static_cast<size_t>(p * plane_size)];
        double lo = v[0], hi = v[0];
        for (long long i = 1; i < plane_size; ++i) {
            lo = std::min(lo, v[i]);
            hi = std::max(hi, v[i]);
        }
        for (long long i = 0; i < plane_size; ++i) {
            double norm = hi > lo ? 2.0 * (v[i] - lo) / (hi - lo) - 1.0 : 0.0;
            long long b = static_cast<long long>((norm + 1.0) / 2.0 * bins);
            b = std::clamp<long long>(b, 0, bins - 1);
            hist[static_cast<size_t>(b)]++;
        }
    }
    double total = static_cast<double>(features.size());
    double h = 0.0;
    for (long long c : hist)
        if (c > 0) {
            double p = static_cast<double>(c) / total;
            h -= p * std::log2(p);
        }
    return h;
}

}  // namespace mantis
