#pragma once

#include <utility>

#include "mantis/autodiff.hpp"

namespace mantis {

// A leaf tensor with accumulated gradient. The node persists across forward
// passes so the optimizer and checkpoint code can hold on to it.
class Parameter {
public:
    Parameter() : node_(make_var(Tensor::scalar(0.0), true)) {}
    explicit Parameter(Tensor init, bool trainable = true)
        : node_(make_var(std::move(init), trainable)) {}

    Tensor& value() { return node_->value; }
    const Tensor& value() const { return node_->value; }
    Tensor& grad() { return node_->ensure_grad(); }
    bool trainable() const { return node_->requires_grad; }
    void zero_grad() { node_->ensure_grad().fill(0.0); }
    const Var& var() const { return node_; }

private:
    Var node_;
};

using ParamRefs = std::vector<std::pair<std::string, Parameter*>>;

inline void add_param(ParamRefs& out, const std::string& name, Parameter& p) {
    out.emplace_back(name, &p);
}

// 8 groups whenever the channel count allows it, otherwise a single group.
inline int group_norm_groups(long long channels) {
    return (channels >= 8 && channels % 8 == 0) ? 8 : 1;
}

inline Tensor he_normal(const Shape& s, long long fan_in, Rng& rng) {
    return randn(s, rng, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

class Conv2D {
public:
    Conv2D() = default;
    Conv2D(long long in_ch, long long out_ch, int kernel, int pad, int stride, int groups, bool bias,
           Rng& rng)
        : stride_(stride), pad_(pad), groups_(groups), has_bias_(bias) {
        if (in_ch % groups != 0) throw std::invalid_argument("Conv2D: groups must divide in channels");
        long long fan_in = (in_ch / groups) * kernel * kernel;
        w_ = Parameter(he_normal(Shape{out_ch, in_ch / groups, kernel, kernel}, fan_in, rng));
        if (bias) b_ = Parameter(Tensor(Shape{1, out_ch, 1, 1}, 0.0));
    }

    Var forward(const Var& x) const {
        Var y = conv2d(x, w_.var(), stride_, pad_, groups_);
        if (has_bias_) y = add(y, b_.var());
        return y;
    }

    void params(ParamRefs& out, const std::string& prefix) {
        add_param(out, prefix + ".weight", w_);
        if (has_bias_) add_param(out, prefix + ".bias", b_);
    }

    Parameter& weight() { return w_; }

private:
    Parameter w_, b_;
    int stride_ = 1, pad_ = 0, groups_ = 1;
    bool has_bias_ = false;
};

class GroupNorm {
public:
    GroupNorm() = default;
    explicit GroupNorm(long long channels, double eps = 1e-5)
        : groups_(group_norm_groups(channels)), eps_(eps),
          gamma_(Tensor(Shape{channels}, 1.0)), beta_(Tensor(Shape{channels}, 0.0)) {}

    Var forward(const Var& x) const { return group_norm(x, gamma_.var(), beta_.var(), groups_, eps_); }

    void params(ParamRefs& out, const std::string& prefix) {
        add_param(out, prefix + ".scale", gamma_);
        add_param(out, prefix + ".shift", beta_);
    }

private:
    int groups_ = 1;
    double eps_ = 1e-5;
    Parameter gamma_, beta_;
};

// Convolution followed by group normalization; no activation inside.
class Conv2DN {
public:
    Conv2DN() = default;
    Conv2DN(long long in_ch, long long out_ch, int kernel, int pad, int stride, int groups, Rng& rng)
        : conv_(in_ch, out_ch, kernel, pad, stride, groups, /*bias=*/false, rng), norm_(out_ch) {}

    Var forward(const Var& x) const { return norm_.forward(conv_.forward(x)); }

    void params(ParamRefs& out, const std::string& prefix) {
        conv_.params(out, prefix + ".conv");
        norm_.params(out, prefix + ".norm");
    }

private:
    Conv2D conv_;
    GroupNorm norm_;
};

// Dense layer followed by group normalization over the feature axis.
class DenseN {
public:
    DenseN() = default;
    DenseN(long long in_features, long long out_features, Rng& rng)
        : out_features_(out_features),
          w_(he_normal(Shape{out_features, in_features}, in_features, rng)), norm_(out_features) {}

    Var forward(const Var& x) const {
        Var y = dense(x, w_.var());
        long long b = y->value.dim(0);
        y = reshape(y, Shape{b, out_features_, 1, 1});
        y = norm_.forward(y);
        return reshape(y, Shape{b, out_features_});
    }

    void params(ParamRefs& out, const std::string& prefix) {
        add_param(out, prefix + ".weight", w_);
        norm_.params(out, prefix + ".norm");
    }

private:
    long long out_features_ = 0;
    Parameter w_;
    GroupNorm norm_;
};

}  // namespace mantis
