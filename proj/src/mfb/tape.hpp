#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "errors.hpp"
#include "jet.hpp"

namespace mfb::ad {

using VarId = int32_t;

struct Range {
    VarId start = 0;
    int32_t n = 0;
    VarId operator[](int i) const { return start + i; }
};

// Reverse-mode tape whose values are second-order jets in the model inputs.
// The forward sweep carries input derivatives (for PDE residual terms such as
// u_x, u_xx obtained via pick1/pick2); the backward sweep differentiates a
// scalar result with respect to the flat parameter vector. Adjoints are
// jet-shaped: seeding the value slot of a picked derivative routes the
// adjoint into the g/h slots of the producing node, and the affine/unary
// backward rules then propagate those slots through the graph. Second-order
// adjoint flow through a nonlinearity needs its third derivative; see
// fn_derivs.
//
// Layers are fused: one Affine node covers a whole matrix-vector product and
// one Act node a whole elementwise activation, so a full model forward costs
// tens of nodes rather than tens of thousands.
class Tape {
public:
    /// Rebinds the tape to a parameter vector and direction count, dropping
    /// all recorded nodes but keeping capacity.
    void reset(std::span<const double> params, int n_dirs) {
        if (n_dirs < 0 || n_dirs > kMaxDirs) throw ContractError("Tape: n_dirs out of range");
        params_ = params;
        k_ = n_dirs;
        clear();
    }

    /// Drops recorded nodes and values, keeping the parameter binding.
    void clear() {
        nodes_.clear();
        val_.clear();
    }

    int n_dirs() const { return k_; }
    size_t n_params() const { return params_.size(); }
    const Jet& value(VarId id) const { return val_[id]; }

    VarId constant(double v) {
        return push_value(Op::Leaf, Jet::constant(v, k_)).out;
    }

    /// Tracked input, seeded with unit derivative along `dir`.
    VarId input(double v, int dir) {
        return push_value(Op::Leaf, Jet::seeded(v, dir, k_)).out;
    }

    /// Leaf with caller-supplied jet (e.g. pre-normalized coordinates).
    VarId leaf(const Jet& j) {
        if (j.k != k_) throw ContractError("Tape::leaf: jet direction count mismatch");
        return push_value(Op::Leaf, j).out;
    }

    VarId add(VarId a, VarId b) {
        Node& n = push_value(Op::Add, val_[a] + val_[b]);
        n.a = a; n.b = b;
        return n.out;
    }

    VarId sub(VarId a, VarId b) {
        Node& n = push_value(Op::Sub, val_[a] - val_[b]);
        n.a = a; n.b = b;
        return n.out;
    }

    VarId mul(VarId a, VarId b) {
        Node& n = push_value(Op::Mul, val_[a] * val_[b]);
        n.a = a; n.b = b;
        return n.out;
    }

    VarId div(VarId a, VarId b) { return mul(a, unary(Fn::Inv, b)); }

    VarId scale(VarId a, double c) {
        Node& n = push_value(Op::Scale, val_[a] * c);
        n.a = a; n.c = c;
        return n.out;
    }

    VarId add_const(VarId a, double c) {
        Node& n = push_value(Op::AddConst, val_[a] + c);
        n.a = a; n.c = c;
        return n.out;
    }

    /// c * a + d as a single node (used for input normalization and copies).
    VarId axpb(VarId a, double c, double d) {
        Node& n = push_value(Op::Axpb, val_[a] * c + d);
        n.a = a; n.c = c;
        return n.out;
    }

    VarId neg(VarId a) { return scale(a, -1.0); }

    VarId unary(Fn fn, VarId a) {
        Node& n = push_value(Op::Unary, apply(fn, val_[a]));
        n.a = a; n.fn = fn;
        return n.out;
    }

    /// First input-derivative of `a` along direction i, as a fresh scalar.
    VarId pick1(VarId a, int i) {
        if (i < 0 || i >= k_) throw ContractError("Tape::pick1: direction out of range");
        Node& n = push_value(Op::Pick1, Jet::constant(val_[a].g[i], k_));
        n.a = a; n.i = i;
        return n.out;
    }

    /// Second input-derivative of `a` along directions (i, j).
    VarId pick2(VarId a, int i, int j) {
        if (i < 0 || i >= k_ || j < 0 || j >= k_)
            throw ContractError("Tape::pick2: direction out of range");
        if (i > j) std::swap(i, j);
        Node& n = push_value(Op::Pick2, Jet::constant(val_[a].d2(i, j), k_));
        n.a = a; n.i = i; n.j = j;
        return n.out;
    }

    /// Fused layer: out = W @ in + b with W row-major [n_out x n_in] at
    /// params[w_slot..] and b at params[b_slot..].
    Range affine(Range in, int n_out, size_t w_slot, size_t b_slot) {
        if (w_slot + size_t(n_out) * in.n > params_.size() || b_slot + n_out > params_.size())
            throw ContractError("Tape::affine: parameter slots out of range");
        Node n;
        n.op = Op::Affine;
        n.a = in.start;
        n.n_in = in.n;
        n.n_out = n_out;
        n.w = w_slot;
        n.bslot = b_slot;
        n.out = VarId(val_.size());
        const int sc = sym_count(k_);
        for (int r = 0; r < n_out; ++r) {
            Jet acc = Jet::constant(params_[b_slot + r], k_);
            const double* wrow = params_.data() + w_slot + size_t(r) * in.n;
            for (int c = 0; c < in.n; ++c) {
                const double w = wrow[c];
                const Jet& x = val_[in.start + c];
                acc.v += w * x.v;
                for (int d = 0; d < k_; ++d) acc.g[d] += w * x.g[d];
                for (int m = 0; m < sc; ++m) acc.h[m] += w * x.h[m];
            }
            val_.push_back(acc);
        }
        nodes_.push_back(n);
        return {n.out, n_out};
    }

    /// Fused elementwise activation over a contiguous range.
    Range act(Range in, Fn fn) {
        Node n;
        n.op = Op::Act;
        n.a = in.start;
        n.n_in = in.n;
        n.n_out = in.n;
        n.fn = fn;
        n.out = VarId(val_.size());
        for (int c = 0; c < in.n; ++c) val_.push_back(apply(fn, val_[in.start + c]));
        nodes_.push_back(n);
        return {n.out, in.n};
    }

    bool finite(VarId id) const { return val_[id].finite(); }

    /// Accumulates seed * d(value of `out`)/d(params) into `grad`.
    /// `grad` must have one entry per parameter; existing contents are kept.
    void backward(VarId out, double seed, std::span<double> grad) {
        if (grad.size() != params_.size())
            throw ContractError("Tape::backward: gradient size mismatch");
        adj_.assign(val_.size(), Jet::constant(0.0, k_));
        adj_[out].v = seed;
        const int sc = sym_count(k_);
        for (size_t ni = nodes_.size(); ni-- > 0;) {
            const Node& n = nodes_[ni];
            switch (n.op) {
                case Op::Leaf:
                    break;
                case Op::Add: {
                    const Jet& a = adj_[n.out];
                    accumulate(n.a, a);
                    accumulate(n.b, a);
                    break;
                }
                case Op::Sub: {
                    const Jet& a = adj_[n.out];
                    accumulate(n.a, a);
                    Jet na = -a;
                    accumulate(n.b, na);
                    break;
                }
                case Op::Mul:
                    backward_mul(n, sc);
                    break;
                case Op::Scale:
                case Op::Axpb: {
                    Jet s = adj_[n.out] * n.c;
                    accumulate(n.a, s);
                    break;
                }
                case Op::AddConst:
                    accumulate(n.a, adj_[n.out]);
                    break;
                case Op::Unary:
                    backward_unary(n.a, n.out, n.fn, sc);
                    break;
                case Op::Pick1:
                    adj_[n.a].g[n.i] += adj_[n.out].v;
                    break;
                case Op::Pick2:
                    adj_[n.a].h[sym_index(n.i, n.j, k_)] += adj_[n.out].v;
                    break;
                case Op::Affine:
                    backward_affine(n, sc, grad);
                    break;
                case Op::Act:
                    for (int c = 0; c < n.n_in; ++c)
                        backward_unary(n.a + c, n.out + c, n.fn, sc);
                    break;
            }
        }
    }

private:
    enum class Op : uint8_t {
        Leaf, Add, Sub, Mul, Scale, AddConst, Axpb, Unary, Pick1, Pick2, Affine, Act
    };

    struct Node {
        Op op = Op::Leaf;
        Fn fn = Fn::Identity;
        VarId a = -1, b = -1;
        VarId out = -1;
        int32_t n_in = 0, n_out = 0;
        size_t w = 0, bslot = 0;
        int32_t i = 0, j = 0;
        double c = 0.0;
    };

    Node& push_value(Op op, const Jet& j) {
        Node n;
        n.op = op;
        n.out = VarId(val_.size());
        val_.push_back(j);
        nodes_.push_back(n);
        return nodes_.back();
    }

    void accumulate(VarId id, const Jet& a) {
        Jet& t = adj_[id];
        t.v += a.v;
        for (int i = 0; i < k_; ++i) t.g[i] += a.g[i];
        for (int m = 0; m < sym_count(k_); ++m) t.h[m] += a.h[m];
    }

    // c = a * b componentwise in jet space:
    //   c.v = a.v b.v
    //   c.g[i] = a.g[i] b.v + a.v b.g[i]
    //   c.h[ij] = a.h[ij] b.v + a.v b.h[ij] + a.g[i] b.g[j] + a.g[j] b.g[i]
    // so the adjoint of each slot distributes along those products.
    void backward_mul(const Node& n, int sc) {
        const Jet& ca = adj_[n.out];
        const Jet& av = val_[n.a];
        const Jet& bv = val_[n.b];
        Jet& aa = adj_[n.a];
        Jet& ba = adj_[n.b];
        aa.v += ca.v * bv.v;
        ba.v += ca.v * av.v;
        for (int i = 0; i < k_; ++i) {
            aa.g[i] += ca.g[i] * bv.v;
            aa.v += ca.g[i] * bv.g[i];
            ba.g[i] += ca.g[i] * av.v;
            ba.v += ca.g[i] * av.g[i];
        }
        int m = 0;
        for (int i = 0; i < k_; ++i) {
            for (int j = i; j < k_; ++j, ++m) {
                const double w = ca.h[m];
                if (w == 0.0) continue;
                aa.h[m] += w * bv.v;
                ba.v += w * av.h[m];
                ba.h[m] += w * av.v;
                aa.v += w * bv.h[m];
                aa.g[i] += w * bv.g[j];
                ba.g[j] += w * av.g[i];
                aa.g[j] += w * bv.g[i];
                ba.g[i] += w * av.g[j];
            }
        }
        (void)sc;
    }

    // c = f(a):
    //   c.v = f
    //   c.g[i] = f' a.g[i]
    //   c.h[ij] = f' a.h[ij] + f'' a.g[i] a.g[j]
    // Differentiating those coefficients with respect to a.v is what brings
    // in f'' and f'''.
    void backward_unary(VarId a_id, VarId out_id, Fn fn, int sc) {
        const Jet& ca = adj_[out_id];
        const Jet& av = val_[a_id];
        Jet& aa = adj_[a_id];
        const FnDerivs d = fn_derivs(fn, av.v);
        aa.v += ca.v * d.d1;
        for (int i = 0; i < k_; ++i) {
            aa.g[i] += ca.g[i] * d.d1;
            aa.v += ca.g[i] * d.d2 * av.g[i];
        }
        int m = 0;
        for (int i = 0; i < k_; ++i) {
            for (int j = i; j < k_; ++j, ++m) {
                const double w = ca.h[m];
                if (w == 0.0) continue;
                aa.h[m] += w * d.d1;
                aa.v += w * (d.d2 * av.h[m] + d.d3 * av.g[i] * av.g[j]);
                aa.g[i] += w * d.d2 * av.g[j];
                aa.g[j] += w * d.d2 * av.g[i];
            }
        }
        (void)sc;
    }

    void backward_affine(const Node& n, int sc, std::span<double> grad) {
        for (int r = 0; r < n.n_out; ++r) {
            const Jet& ca = adj_[n.out + r];
            const double* wrow = params_.data() + n.w + size_t(r) * n.n_in;
            double* grow = grad.data() + n.w + size_t(r) * n.n_in;
            grad[n.bslot + r] += ca.v;
            for (int c = 0; c < n.n_in; ++c) {
                const Jet& x = val_[n.a + c];
                Jet& xa = adj_[n.a + c];
                const double w = wrow[c];
                double gw = ca.v * x.v;
                xa.v += ca.v * w;
                for (int i = 0; i < k_; ++i) {
                    gw += ca.g[i] * x.g[i];
                    xa.g[i] += ca.g[i] * w;
                }
                for (int m = 0; m < sc; ++m) {
                    gw += ca.h[m] * x.h[m];
                    xa.h[m] += ca.h[m] * w;
                }
                grow[c] += gw;
            }
        }
    }

    std::span<const double> params_;
    int k_ = 0;
    std::vector<Node> nodes_;
    std::vector<Jet> val_;
    std::vector<Jet> adj_;
};

} // namespace mfb::ad
