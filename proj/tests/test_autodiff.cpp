#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mfb/jet.hpp"
#include "mfb/rng.hpp"
#include "mfb/tape.hpp"

using namespace mfb;
using namespace mfb::ad;

namespace {

bool close(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

// Central finite difference of a scalar function.
double fd1(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

} // namespace

TEST_CASE("packed symmetric index covers the upper triangle") {
    for (int k = 1; k <= kMaxDirs; ++k) {
        int expected = 0;
        for (int i = 0; i < k; ++i)
            for (int j = i; j < k; ++j)
                CHECK(sym_index(i, j, k) == expected++);
        CHECK(expected == sym_count(k));
    }
}

TEST_CASE("derivative tables match precomputed references") {
    // tanh at 0.5
    auto t = fn_derivs(Fn::Tanh, 0.5);
    CHECK(close(t.f, 0.4621171572600097585, 1e-15));
    CHECK(close(t.d1, 0.78644773296592741015, 1e-15));
    CHECK(close(t.d2, -0.72686198138358727554, 1e-15));
    CHECK(close(t.d3, -0.56520928825977036087, 1e-15));

    // sigmoid at -1.2
    auto s = fn_derivs(Fn::Sigmoid, -1.2);
    CHECK(close(s.f, 0.23147521650098235707, 1e-15));
    CHECK(close(s.d1, 0.17789444064680570219, 1e-15));
    CHECK(close(s.d2, 0.095538132320724690571, 1e-15));
    CHECK(close(s.d3, -0.011984151431433558477, 1e-14));

    // log at 0.7
    auto l = fn_derivs(Fn::Log, 0.7);
    CHECK(close(l.f, -0.35667494393873237891, 1e-15));
    CHECK(close(l.d1, 1.4285714285714285714, 1e-15));
    CHECK(close(l.d2, -2.0408163265306122449, 1e-15));
    CHECK(close(l.d3, 5.8309037900874635569, 1e-15));

    // sqrt at 2
    auto q = fn_derivs(Fn::Sqrt, 2.0);
    CHECK(close(q.f, 1.4142135623730950488, 1e-15));
    CHECK(close(q.d1, 0.3535533905932737622, 1e-15));
    CHECK(close(q.d2, -0.08838834764831844055, 1e-15));
    CHECK(close(q.d3, 0.066291260736238830413, 1e-15));
}

TEST_CASE("derivative tables are internally consistent under finite differences") {
    const Fn fns[] = {Fn::Tanh, Fn::Sin, Fn::Cos, Fn::Sigmoid, Fn::Exp,
                      Fn::Log,  Fn::Sqrt, Fn::Inv, Fn::Sqr, Fn::Identity};
    const double xs[] = {0.3, 0.9, 1.7};
    const double h = 1e-5;
    for (Fn fn : fns) {
        for (double x : xs) {
            auto d = fn_derivs(fn, x);
            auto f0 = [&](double t) { return fn_derivs(fn, t).f; };
            auto f1 = [&](double t) { return fn_derivs(fn, t).d1; };
            auto f2 = [&](double t) { return fn_derivs(fn, t).d2; };
            CHECK(close(fd1(f0, x, h), d.d1, 1e-6));
            CHECK(close(fd1(f1, x, h), d.d2, 1e-6));
            CHECK(close(fd1(f2, x, h), d.d3, 1e-6));
        }
    }
}

TEST_CASE("relu uses the zero-slope convention at the kink") {
    auto a = fn_derivs(Fn::Relu, 0.0);
    CHECK(a.f == 0.0);
    CHECK(a.d1 == 0.0);
    CHECK(a.d2 == 0.0);
    auto b = fn_derivs(Fn::Relu, 2.5);
    CHECK(b.f == 2.5);
    CHECK(b.d1 == 1.0);
    CHECK(b.d2 == 0.0);
    auto c = fn_derivs(Fn::Relu, -0.3);
    CHECK(c.f == 0.0);
    CHECK(c.d1 == 0.0);
}

TEST_CASE("two-variable jet reproduces analytic first and second derivatives") {
    // f(x, y) = sin(x) exp(y/3) + x^2 / (1 + y^2) at (0.7, -0.4)
    Jet x = Jet::seeded(0.7, 0, 2);
    Jet y = Jet::seeded(-0.4, 1, 2);
    Jet f = sin(x) * exp(y * (1.0 / 3.0)) + x * x / (1.0 + y * y);

    CHECK(close(f.v, 0.98621592462942980669, 1e-14));
    CHECK(close(f.d1(0), 1.8762660273139712889, 1e-14));
    CHECK(close(f.d1(1), 0.47925390115471679248, 1e-14));
    CHECK(close(f.d2(0, 0), 1.1603357995085012278, 1e-14));
    CHECK(close(f.d2(0, 1), 1.0554656079948671637, 1e-14));
    CHECK(close(f.d2(1, 1), -0.26383446915600765575, 1e-14));
    CHECK(f.d2(1, 0) == f.d2(0, 1));
}

TEST_CASE("three-variable jet with division, sqrt and cos") {
    // g(x, y, z) = sqrt(x + 2) y / (1 + z^2) + cos(x y) at (0.3, -0.8, 1.1)
    Jet x = Jet::seeded(0.3, 0, 3);
    Jet y = Jet::seeded(-0.8, 1, 3);
    Jet z = Jet::seeded(1.1, 2, 3);
    Jet g = sqrt(x + 2.0) * y / (1.0 + z * z) + cos(x * y);

    CHECK(close(g.v, 0.42235151736413454217, 1e-14));
    CHECK(close(g.d1(0), -0.30950698320429355390, 1e-14));
    CHECK(close(g.d1(1), 0.75754385978800920495, 1e-14));
    CHECK(close(g.d1(2), 0.54650235587030277740, 1e-14));
    CHECK(close(g.d2(0, 0), -0.59571176432647592906, 1e-13));
    CHECK(close(g.d2(0, 1), 0.62000484296985404755, 1e-13));
    CHECK(close(g.d2(0, 2), 0.11880485997180495161, 1e-13));
    CHECK(close(g.d2(1, 1), -0.087420417736682664443, 1e-13));
    CHECK(close(g.d2(1, 2), -0.68312794483787847175, 1e-13));
    CHECK(close(g.d2(2, 2), -0.59123866554458918328, 1e-13));
}

TEST_CASE("jet gradient and Hessian agree with central differences at pinned steps") {
    auto f = [](double x, double y) {
        return std::sin(x) * std::exp(y / 3.0) + x * x / (1.0 + y * y);
    };
    const double x0 = 0.7, y0 = -0.4;
    Jet jx = Jet::seeded(x0, 0, 2);
    Jet jy = Jet::seeded(y0, 1, 2);
    Jet jf = sin(jx) * exp(jy * (1.0 / 3.0)) + jx * jx / (1.0 + jy * jy);

    const double h1 = 1e-4;
    const double gx = (f(x0 + h1, y0) - f(x0 - h1, y0)) / (2 * h1);
    const double gy = (f(x0, y0 + h1) - f(x0, y0 - h1)) / (2 * h1);
    CHECK(close(jf.d1(0), gx, 1e-5));
    CHECK(close(jf.d1(1), gy, 1e-5));

    const double h2 = 1e-3;
    const double hxx = (f(x0 + h2, y0) - 2 * f(x0, y0) + f(x0 - h2, y0)) / (h2 * h2);
    const double hyy = (f(x0, y0 + h2) - 2 * f(x0, y0) + f(x0, y0 - h2)) / (h2 * h2);
    const double hxy = (f(x0 + h2, y0 + h2) - f(x0 + h2, y0 - h2) - f(x0 - h2, y0 + h2) +
                        f(x0 - h2, y0 - h2)) /
                       (4 * h2 * h2);
    CHECK(close(jf.d2(0, 0), hxx, 1e-4));
    CHECK(close(jf.d2(1, 1), hyy, 1e-4));
    CHECK(close(jf.d2(0, 1), hxy, 1e-4));
}

TEST_CASE("jets reject mismatched direction counts") {
    Jet a = Jet::constant(1.0, 2);
    Jet b = Jet::constant(1.0, 3);
    CHECK_THROWS_AS((void)(a + b), ContractError);
    CHECK_THROWS_AS((void)(a * b), ContractError);
    CHECK_THROWS_AS((void)Jet::seeded(0.0, 2, 2), ContractError);
}

namespace {

// Reference MLP forward on plain jets, mirroring the slot layout used by the
// tape test below: per layer, weights [n_out x n_in] row-major then biases.
std::vector<Jet> ref_layer(const std::vector<Jet>& in, const double* p, int n_in, int n_out) {
    std::vector<Jet> out;
    out.reserve(n_out);
    for (int r = 0; r < n_out; ++r) {
        Jet acc = Jet::constant(p[size_t(n_out) * n_in + r], in[0].k);
        for (int c = 0; c < n_in; ++c) acc = acc + Jet::constant(p[size_t(r) * n_in + c], in[0].k) * in[c];
        out.push_back(acc);
    }
    return out;
}

struct TinyNet {
    // dims: 2 -> 8 -> 8 -> 1, tanh hidden, linear output
    static constexpr int d0 = 2, d1 = 8, d2 = 8, d3 = 1;
    static constexpr size_t w1 = 0;
    static constexpr size_t b1 = w1 + d1 * d0;
    static constexpr size_t w2 = b1 + d1;
    static constexpr size_t b2 = w2 + d2 * d1;
    static constexpr size_t w3 = b2 + d2;
    static constexpr size_t b3 = w3 + d3 * d2;
    static constexpr size_t n_params = b3 + d3;

    static Jet forward(std::span<const double> p, const Jet& x, const Jet& t) {
        std::vector<Jet> h = {x, t};
        h = ref_layer(h, p.data() + w1, d0, d1);
        for (auto& v : h) v = tanh(v);
        h = ref_layer(h, p.data() + w2, d1, d2);
        for (auto& v : h) v = tanh(v);
        h = ref_layer(h, p.data() + w3, d2, d3);
        return h[0];
    }

    static VarId forward_taped(Tape& tape, VarId x, VarId t) {
        Range h{x, 2};
        REQUIRE(t == x + 1);
        h = tape.affine(h, d1, w1, b1);
        h = tape.act(h, Fn::Tanh);
        h = tape.affine(h, d2, w2, b2);
        h = tape.act(h, Fn::Tanh);
        h = tape.affine(h, d3, w3, b3);
        return h[0];
    }
};

std::vector<double> tiny_params(uint64_t seed) {
    Rng rng(seed, 0);
    std::vector<double> p(TinyNet::n_params);
    for (auto& v : p) v = 0.4 * rng.normal();
    return p;
}

// Scalar used for the parameter-gradient checks: a Burgers-like residual plus
// a rational term, exercising picks of u_t, u_x, u_xx, u_xt and value reuse.
double residual_loss(std::span<const double> p, double xv, double tv, double nu) {
    Tape tape;
    tape.reset(p, 2);
    VarId x = tape.input(xv, 0);
    VarId t = tape.input(tv, 1);
    VarId u = TinyNet::forward_taped(tape, x, t);
    VarId u_t = tape.pick1(u, 1);
    VarId u_x = tape.pick1(u, 0);
    VarId u_xx = tape.pick2(u, 0, 0);
    VarId u_xt = tape.pick2(u, 0, 1);
    VarId r = tape.add(u_t, tape.mul(u, u_x));
    r = tape.sub(r, tape.scale(u_xx, nu));
    r = tape.add(r, tape.scale(tape.mul(u, u_xt), 0.1));
    VarId denom = tape.add_const(tape.unary(Fn::Sqr, u), 1.0);
    VarId rr = tape.div(r, denom);
    VarId loss = tape.unary(Fn::Sqr, rr);
    return tape.value(loss).v;
}

} // namespace

TEST_CASE("taped MLP forward matches plain jet evaluation") {
    auto p = tiny_params(11);
    const double xv = 0.3, tv = 0.7;

    Jet ju = TinyNet::forward(p, Jet::seeded(xv, 0, 2), Jet::seeded(tv, 1, 2));

    Tape tape;
    tape.reset(p, 2);
    VarId x = tape.input(xv, 0);
    VarId t = tape.input(tv, 1);
    VarId u = TinyNet::forward_taped(tape, x, t);
    const Jet& tu = tape.value(u);

    CHECK(close(tu.v, ju.v, 1e-13));
    for (int i = 0; i < 2; ++i) CHECK(close(tu.d1(i), ju.d1(i), 1e-13));
    for (int i = 0; i < 2; ++i)
        for (int j = i; j < 2; ++j) CHECK(close(tu.d2(i, j), ju.d2(i, j), 1e-13));
}

TEST_CASE("tape backward gradient matches parameter finite differences") {
    auto p = tiny_params(23);
    const double xv = 0.3, tv = 0.7, nu = 0.05;

    Tape tape;
    tape.reset(p, 2);
    VarId x = tape.input(xv, 0);
    VarId t = tape.input(tv, 1);
    VarId u = TinyNet::forward_taped(tape, x, t);
    VarId u_t = tape.pick1(u, 1);
    VarId u_x = tape.pick1(u, 0);
    VarId u_xx = tape.pick2(u, 0, 0);
    VarId u_xt = tape.pick2(u, 0, 1);
    VarId r = tape.add(u_t, tape.mul(u, u_x));
    r = tape.sub(r, tape.scale(u_xx, nu));
    r = tape.add(r, tape.scale(tape.mul(u, u_xt), 0.1));
    VarId denom = tape.add_const(tape.unary(Fn::Sqr, u), 1.0);
    VarId rr = tape.div(r, denom);
    VarId loss = tape.unary(Fn::Sqr, rr);
    REQUIRE(tape.finite(loss));

    std::vector<double> grad(p.size(), 0.0);
    tape.backward(loss, 1.0, grad);

    CHECK(close(tape.value(loss).v, residual_loss(p, xv, tv, nu), 1e-15));

    const double h = 1e-4;
    int checked = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        auto pp = p;
        pp[i] += h;
        const double lp = residual_loss(pp, xv, tv, nu);
        pp[i] -= 2 * h;
        const double lm = residual_loss(pp, xv, tv, nu);
        const double fd = (lp - lm) / (2 * h);
        CHECK_MESSAGE(std::abs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)),
                      "param ", i, ": analytic ", grad[i], " vs fd ", fd);
        ++checked;
    }
    CHECK(checked == int(TinyNet::n_params));
}

TEST_CASE("backward seed weight scales the gradient linearly") {
    auto p = tiny_params(31);
    Tape tape;
    tape.reset(p, 2);
    VarId x = tape.input(0.25, 0);
    VarId t = tape.input(0.5, 1);
    VarId u = TinyNet::forward_taped(tape, x, t);
    VarId loss = tape.unary(Fn::Sqr, tape.pick1(u, 0));

    std::vector<double> g1(p.size(), 0.0), g2(p.size(), 0.0);
    tape.backward(loss, 1.0, g1);
    tape.backward(loss, -2.5, g2);
    for (size_t i = 0; i < p.size(); ++i) CHECK(close(g2[i], -2.5 * g1[i], 1e-13));

    // accumulation: a second backward adds into the same buffer
    tape.backward(loss, 1.5, g2);
    for (size_t i = 0; i < p.size(); ++i) CHECK(close(g2[i], -1.0 * g1[i], 1e-12));
}

TEST_CASE("relu activation on tape is exact for piecewise-linear nets") {
    // y = relu(w x + b) with w=2, b=-1: gradient w.r.t. w is x when active, 0 when not.
    std::vector<double> p = {2.0, -1.0};
    Tape tape;
    tape.reset(p, 1);
    VarId x = tape.input(0.8, 0);
    Range h = tape.affine({x, 1}, 1, 0, 1);
    Range y = tape.act(h, Fn::Relu);
    CHECK(tape.value(y[0]).v == doctest::Approx(0.6));
    CHECK(tape.value(y[0]).d1(0) == doctest::Approx(2.0));

    std::vector<double> grad(2, 0.0);
    tape.backward(y[0], 1.0, grad);
    CHECK(grad[0] == doctest::Approx(0.8));
    CHECK(grad[1] == doctest::Approx(1.0));

    tape.reset(p, 1);
    x = tape.input(0.2, 0); // w x + b = -0.6, inactive
    h = tape.affine({x, 1}, 1, 0, 1);
    y = tape.act(h, Fn::Relu);
    CHECK(tape.value(y[0]).v == 0.0);
    std::fill(grad.begin(), grad.end(), 0.0);
    tape.backward(y[0], 1.0, grad);
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
}

TEST_CASE("tape rejects misuse") {
    std::vector<double> p(4, 0.1);
    Tape tape;
    CHECK_THROWS_AS(tape.reset(p, 5), ContractError);
    tape.reset(p, 2);
    VarId x = tape.input(0.5, 0);
    CHECK_THROWS_AS(tape.pick1(x, 2), ContractError);
    CHECK_THROWS_AS(tape.pick2(x, 0, 3), ContractError);
    CHECK_THROWS_AS(tape.affine({x, 1}, 8, 0, 2), ContractError);
    std::vector<double> bad(3, 0.0);
    CHECK_THROWS_AS(tape.backward(x, 1.0, bad), ContractError);
    Jet wrong = Jet::constant(1.0, 3);
    CHECK_THROWS_AS(tape.leaf(wrong), ContractError);
}
