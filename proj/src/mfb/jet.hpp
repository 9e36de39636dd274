#pragma once

#include <cmath>
#include <cstdint>

#include "errors.hpp"

namespace mfb::ad {

inline constexpr int kMaxDirs = 4;
inline constexpr int kMaxSym = kMaxDirs * (kMaxDirs + 1) / 2;

constexpr int sym_count(int k) { return k * (k + 1) / 2; }

/// Packed index of the (i,j) entry (i <= j) of a symmetric k x k matrix
/// stored as the upper triangle in row-major order.
constexpr int sym_index(int i, int j, int k) {
    return i * k - i * (i - 1) / 2 + (j - i);
}

// Truncated second-order Taylor coefficient bundle ("2-jet"): a value plus
// exact first and second derivatives with respect to k tracked directions.
// The Hessian block is stored as a packed upper triangle, so symmetry holds
// by construction. Arithmetic implements the second-order chain rule; all
// operations require matching k.
struct Jet {
    double v = 0.0;
    double g[kMaxDirs] = {};
    double h[kMaxSym] = {};
    int k = 0;

    static Jet constant(double value, int k) {
        Jet j;
        j.v = value;
        j.k = k;
        return j;
    }

    /// Seed for a tracked input: unit first derivative along `dir`, zero curvature.
    static Jet seeded(double value, int dir, int k) {
        if (dir < 0 || dir >= k) throw ContractError("Jet::seeded: direction out of range");
        Jet j = constant(value, k);
        j.g[dir] = 1.0;
        return j;
    }

    double d1(int i) const { return g[i]; }
    double d2(int i, int j) const {
        return i <= j ? h[sym_index(i, j, k)] : h[sym_index(j, i, k)];
    }

    bool finite() const {
        if (!std::isfinite(v)) return false;
        for (int i = 0; i < k; ++i)
            if (!std::isfinite(g[i])) return false;
        for (int m = 0; m < sym_count(k); ++m)
            if (!std::isfinite(h[m])) return false;
        return true;
    }
};

namespace detail {
inline void check_same_k(const Jet& a, const Jet& b) {
    if (a.k != b.k) throw ContractError("Jet arithmetic on mismatched direction counts");
}
} // namespace detail

inline Jet operator+(const Jet& a, const Jet& b) {
    detail::check_same_k(a, b);
    Jet c = a;
    c.v += b.v;
    for (int i = 0; i < a.k; ++i) c.g[i] += b.g[i];
    for (int m = 0; m < sym_count(a.k); ++m) c.h[m] += b.h[m];
    return c;
}

inline Jet operator-(const Jet& a, const Jet& b) {
    detail::check_same_k(a, b);
    Jet c = a;
    c.v -= b.v;
    for (int i = 0; i < a.k; ++i) c.g[i] -= b.g[i];
    for (int m = 0; m < sym_count(a.k); ++m) c.h[m] -= b.h[m];
    return c;
}

inline Jet operator-(const Jet& a) {
    Jet c = a;
    c.v = -c.v;
    for (int i = 0; i < a.k; ++i) c.g[i] = -c.g[i];
    for (int m = 0; m < sym_count(a.k); ++m) c.h[m] = -c.h[m];
    return c;
}

inline Jet operator*(const Jet& a, const Jet& b) {
    detail::check_same_k(a, b);
    Jet c = Jet::constant(a.v * b.v, a.k);
    for (int i = 0; i < a.k; ++i) c.g[i] = a.g[i] * b.v + a.v * b.g[i];
    int m = 0;
    for (int i = 0; i < a.k; ++i)
        for (int j = i; j < a.k; ++j, ++m)
            c.h[m] = a.h[m] * b.v + a.v * b.h[m] + a.g[i] * b.g[j] + a.g[j] * b.g[i];
    return c;
}

inline Jet operator+(const Jet& a, double s) { Jet c = a; c.v += s; return c; }
inline Jet operator+(double s, const Jet& a) { return a + s; }
inline Jet operator-(const Jet& a, double s) { Jet c = a; c.v -= s; return c; }
inline Jet operator-(double s, const Jet& a) { return (-a) + s; }

inline Jet operator*(const Jet& a, double s) {
    Jet c = a;
    c.v *= s;
    for (int i = 0; i < a.k; ++i) c.g[i] *= s;
    for (int m = 0; m < sym_count(a.k); ++m) c.h[m] *= s;
    return c;
}
inline Jet operator*(double s, const Jet& a) { return a * s; }
inline Jet operator/(const Jet& a, double s) { return a * (1.0 / s); }

/// Chain rule for c = f(a) given f, f', f'' at a.v.
inline Jet apply_unary(const Jet& a, double f, double fp, double fpp) {
    Jet c = Jet::constant(f, a.k);
    for (int i = 0; i < a.k; ++i) c.g[i] = fp * a.g[i];
    int m = 0;
    for (int i = 0; i < a.k; ++i)
        for (int j = i; j < a.k; ++j, ++m)
            c.h[m] = fp * a.h[m] + fpp * a.g[i] * a.g[j];
    return c;
}

inline Jet sin(const Jet& a) { return apply_unary(a, std::sin(a.v), std::cos(a.v), -std::sin(a.v)); }
inline Jet cos(const Jet& a) { return apply_unary(a, std::cos(a.v), -std::sin(a.v), -std::cos(a.v)); }
inline Jet exp(const Jet& a) {
    const double e = std::exp(a.v);
    return apply_unary(a, e, e, e);
}
inline Jet log(const Jet& a) {
    const double inv = 1.0 / a.v;
    return apply_unary(a, std::log(a.v), inv, -inv * inv);
}
inline Jet sqrt(const Jet& a) {
    const double r = std::sqrt(a.v);
    return apply_unary(a, r, 0.5 / r, -0.25 / (a.v * r));
}
inline Jet tanh(const Jet& a) {
    const double f = std::tanh(a.v);
    const double fp = 1.0 - f * f;
    return apply_unary(a, f, fp, -2.0 * f * fp);
}

/// Numerically stable logistic function for plain doubles.
inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Jet sigmoid(const Jet& a) {
    const double s = sigmoid_value(a.v);
    const double sp = s * (1.0 - s);
    return apply_unary(a, s, sp, sp * (1.0 - 2.0 * s));
}

// relu'(0) = 0 and relu'' = 0 everywhere, including the kink.
inline Jet relu(const Jet& a) {
    return a.v > 0.0 ? a : Jet::constant(0.0, a.k);
}

inline Jet inv(const Jet& a) {
    const double f = 1.0 / a.v;
    return apply_unary(a, f, -f * f, 2.0 * f * f * f);
}
inline Jet operator/(const Jet& a, const Jet& b) { return a * inv(b); }
inline Jet operator/(double s, const Jet& b) { return inv(b) * s; }

inline Jet sqr(const Jet& a) { return apply_unary(a, a.v * a.v, 2.0 * a.v, 2.0); }

inline double value_of(double x) { return x; }
inline double value_of(const Jet& j) { return j.v; }

// ---------------------------------------------------------------------------
// Elementary scalar functions with derivatives up to third order, shared by
// jet arithmetic and the reverse-mode tape (whose backward sweep through
// second-derivative components needs f''').

enum class Fn : uint8_t { Identity, Tanh, Relu, Sin, Cos, Sigmoid, Exp, Log, Sqrt, Inv, Sqr };

struct FnDerivs {
    double f, d1, d2, d3;
};

inline FnDerivs fn_derivs(Fn fn, double x) {
    switch (fn) {
        case Fn::Identity: return {x, 1.0, 0.0, 0.0};
        case Fn::Tanh: {
            const double f = std::tanh(x);
            const double fp = 1.0 - f * f;
            const double fpp = -2.0 * f * fp;
            return {f, fp, fpp, -2.0 * (fp * fp + f * fpp)};
        }
        case Fn::Relu:
            return x > 0.0 ? FnDerivs{x, 1.0, 0.0, 0.0} : FnDerivs{0.0, 0.0, 0.0, 0.0};
        case Fn::Sin: return {std::sin(x), std::cos(x), -std::sin(x), -std::cos(x)};
        case Fn::Cos: return {std::cos(x), -std::sin(x), -std::cos(x), std::sin(x)};
        case Fn::Sigmoid: {
            const double s = sigmoid_value(x);
            const double sp = s * (1.0 - s);
            const double spp = sp * (1.0 - 2.0 * s);
            return {s, sp, spp, spp * (1.0 - 2.0 * s) - 2.0 * sp * sp};
        }
        case Fn::Exp: {
            const double e = std::exp(x);
            return {e, e, e, e};
        }
        case Fn::Log: {
            const double i = 1.0 / x;
            return {std::log(x), i, -i * i, 2.0 * i * i * i};
        }
        case Fn::Sqrt: {
            const double r = std::sqrt(x);
            return {r, 0.5 / r, -0.25 / (x * r), 0.375 / (x * x * r)};
        }
        case Fn::Inv: {
            const double i = 1.0 / x;
            const double i2 = i * i;
            return {i, -i2, 2.0 * i2 * i, -6.0 * i2 * i2};
        }
        case Fn::Sqr: return {x * x, 2.0 * x, 2.0, 0.0};
    }
    throw ContractError("fn_derivs: unknown function tag");
}

inline Jet apply(Fn fn, const Jet& a) {
    const FnDerivs d = fn_derivs(fn, a.v);
    return apply_unary(a, d.f, d.d1, d.d2);
}

inline double apply(Fn fn, double x) {
    switch (fn) {
        case Fn::Identity: return x;
        case Fn::Tanh: return std::tanh(x);
        case Fn::Relu: return x > 0.0 ? x : 0.0;
        case Fn::Sin: return std::sin(x);
        case Fn::Cos: return std::cos(x);
        case Fn::Sigmoid: return sigmoid_value(x);
        case Fn::Exp: return std::exp(x);
        case Fn::Log: return std::log(x);
        case Fn::Sqrt: return std::sqrt(x);
        case Fn::Inv: return 1.0 / x;
        case Fn::Sqr: return x * x;
    }
    throw ContractError("apply: unknown function tag");
}

} // namespace mfb::ad
