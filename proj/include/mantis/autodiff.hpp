#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>

#include <Eigen/Dense>

#include "mantis/tensor.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace mantis {

namespace detail {
// Large interior tensors churn quickly; keep big blocks on the heap instead of
// round-tripping through mmap.
inline const int malloc_tuned = [] {
#ifdef __GLIBC__
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
    return 0;
}();
}  // namespace detail

// Reverse-mode autodiff over a recorded DAG. Nodes are created by the op
// functions below and freed when the last Var referencing them goes away.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    Tensor& ensure_grad() {
        if (grad.data.empty()) grad = Tensor(value.shape, 0.0);
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

inline Var constant(Tensor v) { return make_var(std::move(v), false); }
inline Var scalar_const(double v) { return make_var(Tensor::scalar(v), false); }

namespace detail {

inline Var new_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

// Broadcast plumbing: shapes are right-aligned, dims must match or be 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    int r = std::max(ra, rb);
    Shape out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        long long da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
        long long db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                        shape_str(b));
        out[static_cast<size_t>(i)] = std::max(da, db);
    }
    return out;
}

inline std::vector<long long> contiguous_strides(const Shape& s) {
    std::vector<long long> st(s.size());
    long long acc = 1;
    for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
        st[static_cast<size_t>(i)] = acc;
        acc *= s[static_cast<size_t>(i)];
    }
    return st;
}

// strides of `in` viewed in the frame of `out` (0 where broadcast)
inline std::vector<long long> broadcast_strides(const Shape& in, const Shape& out) {
    auto own = contiguous_strides(in);
    int r = static_cast<int>(out.size()), ri = static_cast<int>(in.size());
    std::vector<long long> st(static_cast<size_t>(r), 0);
    for (int i = 0; i < r; ++i) {
        int j = i - (r - ri);
        if (j >= 0 && in[static_cast<size_t>(j)] == out[static_cast<size_t>(i)])
            st[static_cast<size_t>(i)] = own[static_cast<size_t>(j)];
    }
    return st;
}

template <typename F>
inline void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& body) {
    auto sta_pad = broadcast_strides(sa, out);
    auto stb_pad = broadcast_strides(sb, out);
    int r = static_cast<int>(out.size());
    long long n = numel(out);
    std::vector<long long> idx(static_cast<size_t>(r), 0);
    long long ia = 0, ib = 0;
    for (long long lin = 0; lin < n; ++lin) {
        body(lin, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            idx[static_cast<size_t>(d)]++;
            ia += sta_pad[static_cast<size_t>(d)];
            ib += stb_pad[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
            ia -= sta_pad[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            ib -= stb_pad[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            idx[static_cast<size_t>(d)] = 0;
        }
    }
}

// Broadcast patterns that occur in this project, with fast loops for each.
enum class BPat { Same, ScalarA, ScalarB, ChanA, ChanB, PixA, PixB, Generic };

inline BPat classify_bcast(const Shape& a, const Shape& b) {
    if (shapes_equal(a, b)) return BPat::Same;
    if (numel(b) == 1) return BPat::ScalarB;
    if (numel(a) == 1) return BPat::ScalarA;
    if (a.size() == 4 && b.size() == 4) {
        if (b[0] == a[0] && b[1] == a[1] && b[2] == 1 && b[3] == 1) return BPat::ChanB;
        if (a[0] == b[0] && a[1] == b[1] && a[2] == 1 && a[3] == 1) return BPat::ChanA;
        if (b[0] == a[0] && b[1] == 1 && b[2] == a[2] && b[3] == a[3]) return BPat::PixB;
        if (a[0] == b[0] && a[1] == 1 && a[2] == b[2] && a[3] == b[3]) return BPat::PixA;
    }
    return BPat::Generic;
}

// out[lin] = f(A[ia], B[ib]) over the broadcast of A and B
template <typename F>
inline void bcast_apply(const Tensor& A, const Tensor& B, Tensor& out, F&& f) {
    switch (classify_bcast(A.shape, B.shape)) {
        case BPat::Same: {
            long long n = A.size();
            for (long long i = 0; i < n; ++i) out[i] = f(A[i], B[i]);
            return;
        }
        case BPat::ScalarB: {
            double s = B[0];
            long long n = A.size();
            for (long long i = 0; i < n; ++i) out[i] = f(A[i], s);
            return;
        }
        case BPat::ScalarA: {
            double s = A[0];
            long long n = B.size();
            for (long long i = 0; i < n; ++i) out[i] = f(s, B[i]);
            return;
        }
        case BPat::ChanB: {
            long long bc = A.shape[0] * A.shape[1], hw = A.shape[2] * A.shape[3];
            for (long long j = 0; j < bc; ++j) {
                double s = B[j];
                const double* ap = &A.data[static_cast<size_t>(j * hw)];
                double* op = &out.data[static_cast<size_t>(j * hw)];
                for (long long i = 0; i < hw; ++i) op[i] = f(ap[i], s);
            }
            return;
        }
        case BPat::ChanA: {
            long long bc = B.shape[0] * B.shape[1], hw = B.shape[2] * B.shape[3];
            for (long long j = 0; j < bc; ++j) {
                double s = A[j];
                const double* bp = &B.data[static_cast<size_t>(j * hw)];
                double* op = &out.data[static_cast<size_t>(j * hw)];
                for (long long i = 0; i < hw; ++i) op[i] = f(s, bp[i]);
            }
            return;
        }
        case BPat::PixB: {
            long long nb = A.shape[0], nc = A.shape[1], hw = A.shape[2] * A.shape[3];
            for (long long bb = 0; bb < nb; ++bb) {
                const double* bp = &B.data[static_cast<size_t>(bb * hw)];
                for (long long c = 0; c < nc; ++c) {
                    const double* ap = &A.data[static_cast<size_t>((bb * nc + c) * hw)];
                    double* op = &out.data[static_cast<size_t>((bb * nc + c) * hw)];
                    for (long long i = 0; i < hw; ++i) op[i] = f(ap[i], bp[i]);
                }
            }
            return;
        }
        case BPat::PixA: {
            long long nb = B.shape[0], nc = B.shape[1], hw = B.shape[2] * B.shape[3];
            for (long long bb = 0; bb < nb; ++bb) {
                const double* ap = &A.data[static_cast<size_t>(bb * hw)];
                for (long long c = 0; c < nc; ++c) {
                    const double* bp = &B.data[static_cast<size_t>((bb * nc + c) * hw)];
                    double* op = &out.data[static_cast<size_t>((bb * nc + c) * hw)];
                    for (long long i = 0; i < hw; ++i) op[i] = f(ap[i], bp[i]);
                }
            }
            return;
        }
        case BPat::Generic:
            for_each_broadcast(out.shape, A.shape, B.shape,
                               [&](long long lin, long long ia, long long ib) { out[lin] = f(A[ia], B[ib]); });
            return;
    }
}

// Sum g down to `acc` shape (inverse of broadcasting), accumulating into acc.
inline void reduce_into(const Tensor& g, Tensor& acc) {
    switch (classify_bcast(g.shape, acc.shape)) {
        case BPat::Same: {
            for (long long i = 0; i < g.size(); ++i) acc[i] += g[i];
            return;
        }
        case BPat::ScalarB: {
            double s = 0.0;
            for (long long i = 0; i < g.size(); ++i) s += g[i];
            acc[0] += s;
            return;
        }
        case BPat::ChanB: {
            long long bc = g.shape[0] * g.shape[1], hw = g.shape[2] * g.shape[3];
            for (long long j = 0; j < bc; ++j) {
                const double* gp = &g.data[static_cast<size_t>(j * hw)];
                double s = 0.0;
                for (long long i = 0; i < hw; ++i) s += gp[i];
                acc[j] += s;
            }
            return;
        }
        case BPat::PixB: {
            long long nb = g.shape[0], nc = g.shape[1], hw = g.shape[2] * g.shape[3];
            for (long long bb = 0; bb < nb; ++bb) {
                double* ap = &acc.data[static_cast<size_t>(bb * hw)];
                for (long long c = 0; c < nc; ++c) {
                    const double* gp = &g.data[static_cast<size_t>((bb * nc + c) * hw)];
                    for (long long i = 0; i < hw; ++i) ap[i] += gp[i];
                }
            }
            return;
        }
        default: {
            auto st = broadcast_strides(acc.shape, g.shape);
            int r = static_cast<int>(g.shape.size());
            std::vector<long long> idx(static_cast<size_t>(r), 0);
            long long ia = 0;
            for (long long lin = 0; lin < g.size(); ++lin) {
                acc[ia] += g[lin];
                for (int d = r - 1; d >= 0; --d) {
                    idx[static_cast<size_t>(d)]++;
                    ia += st[static_cast<size_t>(d)];
                    if (idx[static_cast<size_t>(d)] < g.shape[static_cast<size_t>(d)]) break;
                    ia -= st[static_cast<size_t>(d)] * g.shape[static_cast<size_t>(d)];
                    idx[static_cast<size_t>(d)] = 0;
                }
            }
            return;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

inline Var binary(const Var& a, const Var& b, BinOp op) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    Tensor out(broadcast_shape(A.shape, B.shape));
    switch (op) {
        case BinOp::Add: bcast_apply(A, B, out, [](double x, double y) { return x + y; }); break;
        case BinOp::Sub: bcast_apply(A, B, out, [](double x, double y) { return x - y; }); break;
        case BinOp::Mul: bcast_apply(A, B, out, [](double x, double y) { return x * y; }); break;
        case BinOp::Div: bcast_apply(A, B, out, [](double x, double y) { return x / y; }); break;
    }
    return new_node(std::move(out), {a, b}, [op](Node& n) {
        const Tensor& g = n.grad;
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        const Tensor& A = pa.value;
        const Tensor& B = pb.value;
        bool need_a = pa.requires_grad, need_b = pb.requires_grad;
        switch (op) {
            case BinOp::Add:
                if (need_a) reduce_into(g, pa.ensure_grad());
                if (need_b) reduce_into(g, pb.ensure_grad());
                return;
            case BinOp::Sub: {
                if (need_a) reduce_into(g, pa.ensure_grad());
                if (need_b) {
                    Tensor gb(g.shape);
                    for (long long i = 0; i < g.size(); ++i) gb[i] = -g[i];
                    reduce_into(gb, pb.ensure_grad());
                }
                return;
            }
            case BinOp::Mul: {
                if (need_a) {
                    Tensor ga(g.shape);
                    bcast_apply(g, B, ga, [](double gv, double y) { return gv * y; });
                    reduce_into(ga, pa.ensure_grad());
                }
                if (need_b) {
                    Tensor gb(g.shape);
                    bcast_apply(g, A, gb, [](double gv, double x) { return gv * x; });
                    reduce_into(gb, pb.ensure_grad());
                }
                return;
            }
            case BinOp::Div: {
                if (need_a) {
                    Tensor ga(g.shape);
                    bcast_apply(g, B, ga, [](double gv, double y) { return gv / y; });
                    reduce_into(ga, pa.ensure_grad());
                }
                if (need_b) {
                    Tensor t(g.shape);
                    bcast_apply(A, B, t, [](double x, double y) { return -x / (y * y); });
                    for (long long i = 0; i < t.size(); ++i) t[i] *= g[i];
                    reduce_into(t, pb.ensure_grad());
                }
                return;
            }
        }
    });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::Add); }
inline Var sub(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::Sub); }
inline Var mul(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::Mul); }
inline Var div(const Var& a, const Var& b) { return detail::binary(a, b, detail::BinOp::Div); }

// a*x + b, elementwise with scalar coefficients
inline Var affine(const Var& x, double a, double b) {
    Tensor out(x->value.shape);
    for (long long i = 0; i < out.size(); ++i) out[i] = a * x->value[i] + b;
    return detail::new_node(std::move(out), {x}, [a](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long i = 0; i < n.grad.size(); ++i) pg[i] += a * n.grad[i];
    });
}

inline Var relu(const Var& x) {
    Tensor out(x->value.shape);
    for (long long i = 0; i < out.size(); ++i) out[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
    return detail::new_node(std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long i = 0; i < n.grad.size(); ++i)
            if (p.value[i] > 0.0) pg[i] += n.grad[i];
    });
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Var sigmoid(const Var& x) {
    Tensor out(x->value.shape);
    for (long long i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(x->value[i]);
    return detail::new_node(std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long i = 0; i < n.grad.size(); ++i) {
            double s = n.value[i];
            pg[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

inline Var vlog(const Var& x) {
    Tensor out(x->value.shape);
    for (long long i = 0; i < out.size(); ++i) out[i] = std::log(x->value[i]);
    return detail::new_node(std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i] / p.value[i];
    });
}

// clamp with pass-through gradient on [lo, hi]
inline Var clampv(const Var& x, double lo, double hi) {
    Tensor out(x->value.shape);
    for (long long i = 0; i < out.size(); ++i) out[i] = std::clamp(x->value[i], lo, hi);
    return detail::new_node(std::move(out), {x}, [lo, hi](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long i = 0; i < n.grad.size(); ++i) {
            double v = p.value[i];
            if (v >= lo && v <= hi) pg[i] += n.grad[i];
        }
    });
}

inline Var softmax(const Var& x, int axis) {
    const Tensor& X = x->value;
    int r = X.rank();
    if (axis < 0) axis += r;
    long long outer = 1, inner = 1, n = X.dim(axis);
    for (int i = 0; i < axis; ++i) outer *= X.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= X.dim(i);
    Tensor out(X.shape);
    for (long long o = 0; o < outer; ++o)
        for (long long in = 0; in < inner; ++in) {
            long long base = o * n * inner + in;
            double m = X[base];
            for (long long c = 1; c < n; ++c) m = std::max(m, X[base + c * inner]);
            double s = 0.0;
            for (long long c = 0; c < n; ++c) {
                double e = std::exp(X[base + c * inner] - m);
                out[base + c * inner] = e;
                s += e;
            }
            for (long long c = 0; c < n; ++c) out[base + c * inner] /= s;
        }
    return detail::new_node(std::move(out), {x}, [outer, inner, n](Node& nd) {
        Node& p = *nd.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long o = 0; o < outer; ++o)
            for (long long in = 0; in < inner; ++in) {
                long long base = o * n * inner + in;
                double dot = 0.0;
                for (long long c = 0; c < n; ++c)
                    dot += nd.grad[base + c * inner] * nd.value[base + c * inner];
                for (long long c = 0; c < n; ++c) {
                    double s = nd.value[base + c * inner];
                    pg[base + c * inner] += s * (nd.grad[base + c * inner] - dot);
                }
            }
    });
}

// sum over `axes`, keeping reduced dims as size 1
inline Var reduce_sum(const Var& x, std::vector<int> axes, bool keepdims = true) {
    const Tensor& X = x->value;
    int r = X.rank();
    std::vector<bool> red(static_cast<size_t>(r), false);
    for (int a : axes) {
        if (a < 0) a += r;
        if (a < 0 || a >= r) throw std::invalid_argument("reduce_sum: axis out of range");
        red[static_cast<size_t>(a)] = true;
    }
    Shape os = X.shape;
    for (int i = 0; i < r; ++i)
        if (red[static_cast<size_t>(i)]) os[static_cast<size_t>(i)] = 1;
    Tensor out(os, 0.0);
    switch (detail::classify_bcast(X.shape, os)) {
        case detail::BPat::ChanB: {  // sum over H,W per (b,c)
            long long bc = X.shape[0] * X.shape[1], hw = X.shape[2] * X.shape[3];
            for (long long j = 0; j < bc; ++j) {
                const double* p = &X.data[static_cast<size_t>(j * hw)];
                double s = 0.0;
                for (long long i = 0; i < hw; ++i) s += p[i];
                out[j] = s;
            }
            break;
        }
        case detail::BPat::PixB: {  // sum over C per pixel
            long long nb = X.shape[0], nc = X.shape[1], hw = X.shape[2] * X.shape[3];
            for (long long bb = 0; bb < nb; ++bb) {
                double* op = &out.data[static_cast<size_t>(bb * hw)];
                for (long long c = 0; c < nc; ++c) {
                    const double* p = &X.data[static_cast<size_t>((bb * nc + c) * hw)];
                    for (long long i = 0; i < hw; ++i) op[i] += p[i];
                }
            }
            break;
        }
        case detail::BPat::ScalarB: {
            out[0] = X.sum();
            break;
        }
        default: {
            auto st = detail::broadcast_strides(os, X.shape);
            std::vector<long long> idx(static_cast<size_t>(r), 0);
            long long io = 0;
            for (long long lin = 0; lin < X.size(); ++lin) {
                out[io] += X[lin];
                for (int d = r - 1; d >= 0; --d) {
                    idx[static_cast<size_t>(d)]++;
                    io += st[static_cast<size_t>(d)];
                    if (idx[static_cast<size_t>(d)] < X.shape[static_cast<size_t>(d)]) break;
                    io -= st[static_cast<size_t>(d)] * X.shape[static_cast<size_t>(d)];
                    idx[static_cast<size_t>(d)] = 0;
                }
            }
        }
    }
    if (!keepdims) {
        Shape final_shape;
        for (int i = 0; i < r; ++i)
            if (!red[static_cast<size_t>(i)]) final_shape.push_back(X.shape[static_cast<size_t>(i)]);
        if (final_shape.empty()) final_shape = {1};
        out.shape = final_shape;
    }
    Shape kept = os;  // keepdims shape, for the backward broadcast
    return detail::new_node(std::move(out), {x}, [kept](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        const Shape& xs = p.value.shape;
        Tensor gk = n.grad;
        gk.shape = kept;
        switch (detail::classify_bcast(xs, kept)) {
            case detail::BPat::ChanB: {
                long long bc = xs[0] * xs[1], hw = xs[2] * xs[3];
                for (long long j = 0; j < bc; ++j) {
                    double gv = gk[j];
                    double* p = &pg.data[static_cast<size_t>(j * hw)];
                    for (long long i = 0; i < hw; ++i) p[i] += gv;
                }
                return;
            }
            case detail::BPat::PixB: {
                long long nb = xs[0], nc = xs[1], hw = xs[2] * xs[3];
                for (long long bb = 0; bb < nb; ++bb) {
                    const double* gp = &gk.data[static_cast<size_t>(bb * hw)];
                    for (long long c = 0; c < nc; ++c) {
                        double* p = &pg.data[static_cast<size_t>((bb * nc + c) * hw)];
                        for (long long i = 0; i < hw; ++i) p[i] += gp[i];
                    }
                }
                return;
            }
            case detail::BPat::ScalarB: {
                double gv = gk[0];
                for (long long i = 0; i < pg.size(); ++i) pg[i] += gv;
                return;
            }
            default: {
                int r2 = static_cast<int>(xs.size());
                auto st2 = detail::broadcast_strides(kept, xs);
                std::vector<long long> idx2(static_cast<size_t>(r2), 0);
                long long io2 = 0;
                for (long long lin = 0; lin < pg.size(); ++lin) {
                    pg[lin] += gk[io2];
                    for (int d = r2 - 1; d >= 0; --d) {
                        idx2[static_cast<size_t>(d)]++;
                        io2 += st2[static_cast<size_t>(d)];
                        if (idx2[static_cast<size_t>(d)] < xs[static_cast<size_t>(d)]) break;
                        io2 -= st2[static_cast<size_t>(d)] * xs[static_cast<size_t>(d)];
                        idx2[static_cast<size_t>(d)] = 0;
                    }
                }
            }
        }
    });
}

// a*X + b*Y + c elementwise for same-shape X, Y
inline Var lincomb(double a, const Var& x, double b, const Var& y, double c = 0.0) {
    if (!shapes_equal(x->value.shape, y->value.shape))
        throw std::invalid_argument("lincomb: shape mismatch");
    Tensor out(x->value.shape);
    const Tensor& X = x->value;
    const Tensor& Y = y->value;
    for (long long i = 0; i < out.size(); ++i) out[i] = a * X[i] + b * Y[i] + c;
    return detail::new_node(std::move(out), {x, y}, [a, b](Node& n) {
        Node& px = *n.parents[0];
        Node& py = *n.parents[1];
        if (px.requires_grad) {
            Tensor& g = px.ensure_grad();
            for (long long i = 0; i < n.grad.size(); ++i) g[i] += a * n.grad[i];
        }
        if (py.requires_grad) {
            Tensor& g = py.ensure_grad();
            for (long long i = 0; i < n.grad.size(); ++i) g[i] += b * n.grad[i];
        }
    });
}

// total sum as a {1} tensor
inline Var sum_all(const Var& x) {
    Tensor out = Tensor::scalar(x->value.sum());
    return detail::new_node(std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        double g = n.grad[0];
        for (long long i = 0; i < pg.size(); ++i) pg[i] += g;
    });
}

inline Var mean_all(const Var& x) {
    return affine(sum_all(x), 1.0 / static_cast<double>(x->value.size()), 0.0);
}

inline Var reshape(const Var& x, Shape s) {
    if (numel(s) != x->value.size()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor out = x->value;
    out.shape = s;
    return detail::new_node(std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pg = p.ensure_grad();
        for (long long i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    });
}

inline Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input");
    int r = xs[0]->value.rank();
    if (axis < 0) axis += r;
    Shape os = xs[0]->value.shape;
    long long total = 0;
    for (const auto& v : xs) {
        if (v->value.rank() != r) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && v->value.dim(i) != os[static_cast<size_t>(i)])
                throw std::invalid_argument("concat: shape mismatch off-axis");
        total += v->value.dim(axis);
    }
    os[static_cast<size_t>(axis)] = total;
    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
    for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
    Tensor out(os);
    long long off = 0;
    for (const auto& v : xs) {
        long long na = v->value.dim(axis);
        for (long long o = 0; o < outer; ++o)
            for (long long c = 0; c < na; ++c)
                std::copy_n(&v->value.data[static_cast<size_t>((o * na + c) * inner)], inner,
                            &out.data[static_cast<size_t>((o * total + off + c) * inner)]);
        off += na;
    }
    return detail::new_node(std::move(out), xs, [axis, outer, inner, total](Node& n) {
        long long off2 = 0;
        for (auto& pp : n.parents) {
            Node& p = *pp;
            long long na = p.value.dim(axis);
            if (p.requires_grad) {
                Tensor& pg = p.ensure_grad();
                for (long long o = 0; o < outer; ++o)
                    for (long long c = 0; c < na; ++c) {
                        const double* src = &n.grad.data[static_cast<size_t>((o * total + off2 + c) * inner)];
                        double* dst = &pg.data[static_cast<size_t>((o * na + c) * inner)];
                        for (long long i = 0; i < inner; ++i) dst[i] += src[i];
                    }
            }
            off2 += na;
        }
    });
}

// -------- convolution --------

namespace detail {

inline void im2col(const double* x, long long C, long long H, long long W, int k, int pad,
                   int stride, long long Ho, long long Wo, double* cols) {
    for (long long c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
                for (long long oy = 0; oy < Ho; ++oy) {
                    long long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(row + oy * Wo, row + (oy + 1) * Wo, 0.0);
                        continue;
                    }
                    const double* xrow = x + (c * H + iy) * W;
                    for (long long ox = 0; ox < Wo; ++ox) {
                        long long ix = ox * stride - pad + kx;
                        row[oy * Wo + ox] = (ix >= 0 && ix < W) ? xrow[ix] : 0.0;
                    }
                }
            }
}

inline void col2im_add(const double* cols, long long C, long long H, long long W, int k, int pad,
                       int stride, long long Ho, long long Wo, double* dx) {
    for (long long c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + ((c * k + ky) * k + kx) * Ho * Wo;
                for (long long oy = 0; oy < Ho; ++oy) {
                    long long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    double* xrow = dx + (c * H + iy) * W;
                    for (long long ox = 0; ox < Wo; ++ox) {
                        long long ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) xrow[ix] += row[oy * Wo + ox];
                    }
                }
            }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace detail

// x: (B,Cin,H,W), w: (Cout, Cin/groups, k, k) -> (B,Cout,H',W'); no bias here.
inline Var conv2d(const Var& x, const Var& w, int stride, int pad, int groups) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    if (X.rank() != 4 || W.rank() != 4) throw std::invalid_argument("conv2d: rank-4 tensors required");
    long long B = X.dim(0), Cin = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    long long Cout = W.dim(0);
    int k = static_cast<int>(W.dim(2));
    if (W.dim(2) != W.dim(3)) throw std::invalid_argument("conv2d: square kernels only");
    if (Cin % groups != 0 || Cout % groups != 0)
        throw std::invalid_argument("conv2d: groups must divide channels");
    if (W.dim(1) != Cin / groups)
        throw std::invalid_argument("conv2d: weight shape mismatch, got " + shape_str(W.shape) +
                                    " for input " + shape_str(X.shape));
    long long Ho = (H + 2 * pad - k) / stride + 1;
    long long Wo = (Wd + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: non-positive output dims");

    long long Kfull = Cin * k * k;
    long long Kg = (Cin / groups) * k * k;
    long long CoutG = Cout / groups;
    Tensor out(Shape{B, Cout, Ho, Wo});
    std::vector<double> cols(static_cast<size_t>(Kfull * Ho * Wo));
    for (long long b = 0; b < B; ++b) {
        detail::im2col(&X.data[static_cast<size_t>(b * Cin * H * Wd)], Cin, H, Wd, k, pad, stride,
                       Ho, Wo, cols.data());
        for (int g = 0; g < groups; ++g) {
            Eigen::Map<const detail::RowMat> Wm(&W.data[static_cast<size_t>(g * CoutG * Kg)], CoutG, Kg);
            Eigen::Map<const detail::RowMat> Cm(cols.data() + g * Kg * Ho * Wo, Kg, Ho * Wo);
            Eigen::Map<detail::RowMat> Ym(&out.data[static_cast<size_t>((b * Cout + g * CoutG) * Ho * Wo)],
                                          CoutG, Ho * Wo);
            Ym.noalias() = Wm * Cm;
        }
    }
    int kk = k;
    return detail::new_node(std::move(out), {x, w},
                            [stride, pad, groups, kk, B, Cin, H, Wd, Cout, Ho, Wo, Kg, CoutG](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        const Tensor& X = px.value;
        const Tensor& W = pw.value;
        long long Kfull = Cin * kk * kk;
        std::vector<double> cols(static_cast<size_t>(Kfull * Ho * Wo));
        std::vector<double> dcols(static_cast<size_t>(Kfull * Ho * Wo));
        for (long long b = 0; b < B; ++b) {
            if (pw.requires_grad)
                detail::im2col(&X.data[static_cast<size_t>(b * Cin * H * Wd)], Cin, H, Wd, kk, pad,
                               stride, Ho, Wo, cols.data());
            for (int g = 0; g < groups; ++g) {
                Eigen::Map<const detail::RowMat> Gm(
                    &n.grad.data[static_cast<size_t>((b * Cout + g * CoutG) * Ho * Wo)], CoutG, Ho * Wo);
                if (pw.requires_grad) {
                    Eigen::Map<const detail::RowMat> Cm(cols.data() + g * Kg * Ho * Wo, Kg, Ho * Wo);
                    Eigen::Map<detail::RowMat> dWm(&pw.ensure_grad().data[static_cast<size_t>(g * CoutG * Kg)],
                                                   CoutG, Kg);
                    dWm.noalias() += Gm * Cm.transpose();
                }
                if (px.requires_grad) {
                    Eigen::Map<const detail::RowMat> Wm(&W.data[static_cast<size_t>(g * CoutG * Kg)], CoutG, Kg);
                    Eigen::Map<detail::RowMat> dCm(dcols.data() + g * Kg * Ho * Wo, Kg, Ho * Wo);
                    dCm.noalias() = Wm.transpose() * Gm;
                }
            }
            if (px.requires_grad)
                detail::col2im_add(dcols.data(), Cin, H, Wd, kk, pad, stride, Ho, Wo,
                                   &px.ensure_grad().data[static_cast<size_t>(b * Cin * H * Wd)]);
        }
    });
}

// x: (B,K), w: (N,K) -> (B,N)
inline Var dense(const Var& x, const Var& w) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1))
        throw std::invalid_argument("dense: shape mismatch");
    long long B = X.dim(0), K = X.dim(1), N = W.dim(0);
    Tensor out(Shape{B, N});
    Eigen::Map<const detail::RowMat> Xm(X.data.data(), B, K);
    Eigen::Map<const detail::RowMat> Wm(W.data.data(), N, K);
    Eigen::Map<detail::RowMat> Ym(out.data.data(), B, N);
    Ym.noalias() = Xm * Wm.transpose();
    return detail::new_node(std::move(out), {x, w}, [B, K, N](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Eigen::Map<const detail::RowMat> Gm(n.grad.data.data(), B, N);
        if (px.requires_grad) {
            Eigen::Map<const detail::RowMat> Wm(pw.value.data.data(), N, K);
            Eigen::Map<detail::RowMat> dXm(px.ensure_grad().data.data(), B, K);
            dXm.noalias() += Gm * Wm;
        }
        if (pw.requires_grad) {
            Eigen::Map<const detail::RowMat> Xm(px.value.data.data(), B, K);
            Eigen::Map<detail::RowMat> dWm(pw.ensure_grad().data.data(), N, K);
            dWm.noalias() += Gm.transpose() * Xm;
        }
    });
}

// Group normalization over (B,C,...) with per-channel scale/shift; gamma/beta shape {C}.
inline Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5) {
    const Tensor& X = x->value;
    if (X.rank() < 2) throw std::invalid_argument("group_norm: rank >= 2 required");
    long long B = X.dim(0), C = X.dim(1);
    long long spatial = 1;
    for (int i = 2; i < X.rank(); ++i) spatial *= X.dim(i);
    if (C % groups != 0) throw std::invalid_argument("group_norm: groups must divide channels");
    if (gamma->value.size() != C || beta->value.size() != C)
        throw std::invalid_argument("group_norm: scale/shift must have C entries");
    long long cg = C / groups;
    long long n = cg * spatial;
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(B * groups * 2));
    Tensor out(X.shape);
    for (long long b = 0; b < B; ++b)
        for (int g = 0; g < groups; ++g) {
            const double* base = &X.data[static_cast<size_t>((b * C + g * cg) * spatial)];
            double mean = 0.0;
            for (long long i = 0; i < n; ++i) mean += base[i];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (long long i = 0; i < n; ++i) {
                double d = base[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[static_cast<size_t>((b * groups + g) * 2)] = mean;
            (*stats)[static_cast<size_t>((b * groups + g) * 2 + 1)] = inv;
            double* obase = &out.data[static_cast<size_t>((b * C + g * cg) * spatial)];
            for (long long c = 0; c < cg; ++c) {
                double sc = gamma->value[g * cg + c], sh = beta->value[g * cg + c];
                for (long long s = 0; s < spatial; ++s)
                    obase[c * spatial + s] = (base[c * spatial + s] - mean) * inv * sc + sh;
            }
        }
    return detail::new_node(std::move(out), {x, gamma, beta}, [B, C, groups, cg, spatial, n, stats](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pb = *nd.parents[2];
        const Tensor& X = px.value;
        const Tensor& G = nd.grad;
        for (long long b = 0; b < B; ++b)
            for (int g = 0; g < groups; ++g) {
                double mean = (*stats)[static_cast<size_t>((b * groups + g) * 2)];
                double inv = (*stats)[static_cast<size_t>((b * groups + g) * 2 + 1)];
                const double* xb = &X.data[static_cast<size_t>((b * C + g * cg) * spatial)];
                const double* gb = &G.data[static_cast<size_t>((b * C + g * cg) * spatial)];
                if (pg.requires_grad || pb.requires_grad) {
                    for (long long c = 0; c < cg; ++c) {
                        double dgam = 0.0, dbet = 0.0;
                        for (long long s = 0; s < spatial; ++s) {
                            double xh = (xb[c * spatial + s] - mean) * inv;
                            dgam += gb[c * spatial + s] * xh;
                            dbet += gb[c * spatial + s];
                        }
                        if (pg.requires_grad) pg.ensure_grad()[g * cg + c] += dgam;
                        if (pb.requires_grad) pb.ensure_grad()[g * cg + c] += dbet;
                    }
                }
                if (px.requires_grad) {
                    double s1 = 0.0, s2 = 0.0;
                    for (long long c = 0; c < cg; ++c) {
                        double sc = pg.value[g * cg + c];
                        for (long long s = 0; s < spatial; ++s) {
                            double gh = gb[c * spatial + s] * sc;
                            double xh = (xb[c * spatial + s] - mean) * inv;
                            s1 += gh;
                            s2 += gh * xh;
                        }
                    }
                    double in_n = 1.0 / static_cast<double>(n);
                    double* dxb = &px.ensure_grad().data[static_cast<size_t>((b * C + g * cg) * spatial)];
                    for (long long c = 0; c < cg; ++c) {
                        double sc = pg.value[g * cg + c];
                        for (long long s = 0; s < spatial; ++s) {
                            double gh = gb[c * spatial + s] * sc;
                            double xh = (xb[c * spatial + s] - mean) * inv;
                            dxb[c * spatial + s] += inv * (gh - s1 * in_n - xh * s2 * in_n);
                        }
                    }
                }
            }
    });
}

// max pool with window == stride; ties resolve to the first element scanned
inline Var maxpool2d(const Var& x, int win_y, int win_x) {
    const Tensor& X = x->value;
    if (X.rank() != 4) throw std::invalid_argument("maxpool2d: rank-4 required");
    long long B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H % win_y != 0 || W % win_x != 0)
        throw std::invalid_argument("maxpool2d: spatial dims must be divisible by window");
    long long Ho = H / win_y, Wo = W / win_x;
    Tensor out(Shape{B, C, Ho, Wo});
    auto arg = std::make_shared<std::vector<long long>>(static_cast<size_t>(out.size()));
    long long oi = 0;
    for (long long b = 0; b < B; ++b)
        for (long long c = 0; c < C; ++c)
            for (long long oy = 0; oy < Ho; ++oy)
                for (long long ox = 0; ox < Wo; ++ox, ++oi) {
                    double best = -std::numeric_limits<double>::infinity();
                    long long besti = 0;
                    for (int dy = 0; dy < win_y; ++dy)
                        for (int dx = 0; dx < win_x; ++dx) {
                            long long idx = ((b * C + c) * H + oy * win_y + dy) * W + ox * win_x + dx;
                            if (X[idx] > best) {
                                best = X[idx];
                                besti = idx;
                            }
                        }
                    out[oi] = best;
                    (*arg)[static_cast<size_t>(oi)] = besti;
                }
    return detail::new_node(std::move(out), {x}, [arg](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pgt = p.ensure_grad();
        for (long long i = 0; i < n.grad.size(); ++i) pgt[(*arg)[static_cast<size_t>(i)]] += n.grad[i];
    });
}

inline Var maxpool2d(const Var& x, int win) { return maxpool2d(x, win, win); }

// bilinear x2 upsampling with half-pixel centers
inline Var bilinear_up2(const Var& x) {
    const Tensor& X = x->value;
    if (X.rank() != 4) throw std::invalid_argument("bilinear_up2: rank-4 required");
    long long B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    if (H < 1 || W < 1) throw std::invalid_argument("bilinear_up2: non-positive spatial dims");
    long long Ho = 2 * H, Wo = 2 * W;
    auto make_axis = [](long long n_in, long long n_out) {
        std::vector<std::tuple<long long, long long, double>> m(static_cast<size_t>(n_out));
        for (long long o = 0; o < n_out; ++o) {
            double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
            double c = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
            long long i0 = static_cast<long long>(std::floor(c));
            long long i1 = std::min(i0 + 1, n_in - 1);
            m[static_cast<size_t>(o)] = {i0, i1, c - static_cast<double>(i0)};
        }
        return m;
    };
    auto ym = make_axis(H, Ho);
    auto xm = make_axis(W, Wo);
    Tensor out(Shape{B, C, Ho, Wo});
    for (long long b = 0; b < B; ++b)
        for (long long c = 0; c < C; ++c) {
            const double* src = &X.data[static_cast<size_t>((b * C + c) * H * W)];
            double* dst = &out.data[static_cast<size_t>((b * C + c) * Ho * Wo)];
            for (long long oy = 0; oy < Ho; ++oy) {
                auto [y0, y1, wy] = ym[static_cast<size_t>(oy)];
                for (long long ox = 0; ox < Wo; ++ox) {
                    auto [x0, x1, wx] = xm[static_cast<size_t>(ox)];
                    double v00 = src[y0 * W + x0], v01 = src[y0 * W + x1];
                    double v10 = src[y1 * W + x0], v11 = src[y1 * W + x1];
                    dst[oy * Wo + ox] =
                        (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                }
            }
        }
    return detail::new_node(std::move(out), {x}, [B, C, H, W, Ho, Wo, ym, xm](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pgt = p.ensure_grad();
        for (long long b = 0; b < B; ++b)
            for (long long c = 0; c < C; ++c) {
                double* dst = &pgt.data[static_cast<size_t>((b * C + c) * H * W)];
                const double* g = &n.grad.data[static_cast<size_t>((b * C + c) * Ho * Wo)];
                for (long long oy = 0; oy < Ho; ++oy) {
                    auto [y0, y1, wy] = ym[static_cast<size_t>(oy)];
                    for (long long ox = 0; ox < Wo; ++ox) {
                        auto [x0, x1, wx] = xm[static_cast<size_t>(ox)];
                        double gv = g[oy * Wo + ox];
                        dst[y0 * W + x0] += gv * (1 - wy) * (1 - wx);
                        dst[y0 * W + x1] += gv * (1 - wy) * wx;
                        dst[y1 * W + x0] += gv * wy * (1 - wx);
                        dst[y1 * W + x1] += gv * wy * wx;
                    }
                }
            }
    });
}

inline Var nearest_up(const Var& x, int scale_y, int scale_x) {
    const Tensor& X = x->value;
    if (X.rank() != 4) throw std::invalid_argument("nearest_up: rank-4 required");
    long long B = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
    long long Ho = H * scale_y, Wo = W * scale_x;
    Tensor out(Shape{B, C, Ho, Wo});
    for (long long b = 0; b < B; ++b)
        for (long long c = 0; c < C; ++c)
            for (long long oy = 0; oy < Ho; ++oy)
                for (long long ox = 0; ox < Wo; ++ox)
                    out.at4(b, c, oy, ox) = X.at4(b, c, oy / scale_y, ox / scale_x);
    return detail::new_node(std::move(out), {x}, [scale_y, scale_x, B, C, H, W](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& pgt = p.ensure_grad();
        long long Ho = H * scale_y, Wo = W * scale_x;
        for (long long b = 0; b < B; ++b)
            for (long long c = 0; c < C; ++c)
                for (long long oy = 0; oy < Ho; ++oy)
                    for (long long ox = 0; ox < Wo; ++ox)
                        pgt.at4(b, c, oy / scale_y, ox / scale_x) += n.grad.at4(b, c, oy, ox);
    });
}

inline Var nearest_up(const Var& x, int scale) { return nearest_up(x, scale, scale); }

// -------- backward driver --------

inline void backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;
    // post-order topological sort (iterative)
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && !node->grad.data.empty()) node->backprop(*node);
    }
}

}  // namespace mantis
