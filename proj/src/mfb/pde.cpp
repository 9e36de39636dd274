#include "pde.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "errors.hpp"
#include "rng.hpp"

namespace mfb {

using ad::Jet;
using ad::Tape;
using ad::VarId;

namespace {
constexpr double kPi = 3.14159265358979323846;

double open_unit(Rng& rng) {
    double u;
    do {
        u = rng.uniform();
    } while (u == 0.0);
    return u;
}
} // namespace

Sampling sampling_from_name(const std::string& tag) {
    if (tag == "uniform") return Sampling::Uniform;
    if (tag == "latin-hypercube") return Sampling::LatinHypercube;
    if (tag == "residual-adaptive") return Sampling::ResidualAdaptive;
    throw ConfigError("unknown sampling strategy: " + tag);
}

const char* sampling_name(Sampling s) {
    switch (s) {
        case Sampling::Uniform: return "uniform";
        case Sampling::LatinHypercube: return "latin-hypercube";
        case Sampling::ResidualAdaptive: return "residual-adaptive";
    }
    throw ContractError("sampling_name: unknown strategy");
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature via the orthonormal Hermite recurrence: roots of
// p_n located by scanning for sign changes and polishing with Newton
// (p_n' = sqrt(2n) p_{n-1}), weights from the Christoffel sum.

namespace {

// value of p_n and p_{n-1} at z, orthonormal w.r.t. exp(-z^2)
std::pair<double, double> hermite_pair(int n, double z) {
    double pm = 0.0;
    double pc = 0.7511255444649425; // pi^{-1/4}
    for (int k = 0; k < n; ++k) {
        const double pn = (z * pc - std::sqrt(0.5 * k) * pm) / std::sqrt(0.5 * (k + 1));
        pm = pc;
        pc = pn;
    }
    return {pc, pm};
}

double christoffel_weight(int n, double z) {
    double pm = 0.0;
    double pc = 0.7511255444649425;
    double sum = pc * pc;
    for (int k = 0; k + 1 < n; ++k) {
        const double pn = (z * pc - std::sqrt(0.5 * k) * pm) / std::sqrt(0.5 * (k + 1));
        pm = pc;
        pc = pn;
        sum += pc * pc;
    }
    return 1.0 / sum;
}

GaussHermite compute_gauss_hermite(int n) {
    if (n < 2) throw ContractError("gauss_hermite: order too small");
    const double hi = std::sqrt(2.0 * n + 1.0);
    std::vector<double> pos_roots;

    // scan the positive half-axis; roots are symmetric about zero
    const int scan = 40 * n;
    double prev_z = 0.0;
    double prev_p = hermite_pair(n, 0.0).first;
    for (int i = 1; i <= scan; ++i) {
        const double z = hi * double(i) / scan;
        const double p = hermite_pair(n, z).first;
        if (prev_p == 0.0) {
            pos_roots.push_back(prev_z);
        } else if (p == 0.0) {
            pos_roots.push_back(z);
        } else if ((prev_p < 0) != (p < 0)) {
            double a = prev_z, b = z;
            double x = 0.5 * (a + b);
            for (int it = 0; it < 100; ++it) {
                auto [pn, pnm1] = hermite_pair(n, x);
                const double dp = std::sqrt(2.0 * n) * pnm1;
                double nx = x - pn / dp;
                if (!(nx > a && nx < b)) nx = 0.5 * (a + b); // bisect fallback
                const double pv = hermite_pair(n, nx).first;
                if ((pv < 0) == (hermite_pair(n, a).first < 0))
                    a = nx;
                else
                    b = nx;
                if (std::abs(nx - x) <= 1e-15 * std::max(1.0, std::abs(nx))) {
                    x = nx;
                    break;
                }
                x = nx;
            }
            pos_roots.push_back(x);
        }
        prev_z = z;
        prev_p = p;
    }

    GaussHermite gh;
    const bool odd = n % 2 == 1;
    // drop a spurious root at 0 from scanning when n is even
    if (!odd && !pos_roots.empty() && pos_roots.front() < 1e-12)
        pos_roots.erase(pos_roots.begin());
    if (odd && (pos_roots.empty() || pos_roots.front() > 1e-12))
        pos_roots.insert(pos_roots.begin(), 0.0);

    std::vector<double> half_w(pos_roots.size());
    for (size_t i = 0; i < pos_roots.size(); ++i) half_w[i] = christoffel_weight(n, pos_roots[i]);

    for (size_t i = pos_roots.size(); i-- > 0;) {
        if (pos_roots[i] > 1e-12) {
            gh.nodes.push_back(-pos_roots[i]);
            gh.weights.push_back(half_w[i]);
        }
    }
    for (size_t i = 0; i < pos_roots.size(); ++i) {
        gh.nodes.push_back(pos_roots[i]);
        gh.weights.push_back(half_w[i]);
    }
    if (int(gh.nodes.size()) != n)
        throw NumericError("gauss_hermite", "root scan found wrong count");
    return gh;
}

} // namespace

const GaussHermite& gauss_hermite(int n) {
    static std::map<int, GaussHermite> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, compute_gauss_hermite(n)).first;
    return it->second;
}

// ---------------------------------------------------------------------------
// Oracles

namespace {
constexpr int kChNodes = 160;
}

template <class T>
T burgers_cole_hopf(const T& x, const T& t, double nu) {
    if (ad::value_of(t) <= 1e-12) return 0.0 - sin(x * kPi);
    const auto& gh = gauss_hermite(kChNodes);
    const int n = int(gh.nodes.size());
    const double A = 1.0 / (2.0 * kPi * nu);

    // fold the quadrature weights into the exponent and shift by the largest
    // term so the denominator stays O(1); otherwise its reciprocal's second
    // derivative overflows when the peak sits under a far-tail node
    const double sv = std::sqrt(4.0 * nu * ad::value_of(t));
    const double xv = ad::value_of(x);
    std::vector<double> lw(n);
    double shift = -1e300;
    for (int i = 0; i < n; ++i) {
        lw[i] = std::log(gh.weights[i]);
        shift = std::max(shift, lw[i] - std::cos(kPi * (xv - sv * gh.nodes[i])) * A);
    }

    T s = sqrt(t * (4.0 * nu));
    T num = x * 0.0, den = num;
    for (int i = 0; i < n; ++i) {
        T y = (x - s * gh.nodes[i]) * kPi;
        T e = exp(cos(y) * (-A) + (lw[i] - shift));
        num = num + sin(y) * e;
        den = den + e;
    }
    return 0.0 - num / den;
}

template double burgers_cole_hopf<double>(const double&, const double&, double);
template Jet burgers_cole_hopf<Jet>(const Jet&, const Jet&, double);

template <class T>
std::array<T, 3> taylor_green(const T& x, const T& y, const T& t, double nu) {
    T e2 = exp(t * (-2.0 * nu));
    T e4 = exp(t * (-4.0 * nu));
    T u = 0.0 - cos(x) * sin(y) * e2;
    T v = sin(x) * cos(y) * e2;
    T p = (cos(x * 2.0) + cos(y * 2.0)) * e4 * (-0.25);
    return {u, v, p};
}

template std::array<double, 3> taylor_green<double>(const double&, const double&, const double&,
                                                    double);
template std::array<Jet, 3> taylor_green<Jet>(const Jet&, const Jet&, const Jet&, double);

double heat_exact(double x, double y) { return std::sin(kPi * x) * std::sin(kPi * y); }

double heat_source_term(double x, double y, double k) {
    return 2.0 * k * kPi * kPi * std::sin(kPi * x) * std::sin(kPi * y);
}

// ---------------------------------------------------------------------------
// Residual operators

double residual_burgers(const Jet& u, double nu) {
    if (u.k != 2)
        throw ContractError("residual_burgers: bundle must carry (x,t) derivatives");
    return u.d1(1) + u.v * u.d1(0) - nu * u.d2(0, 0);
}

double residual_heat(const Jet& u, double k, double f) {
    if (u.k != 2)
        throw ContractError("residual_heat: bundle must carry (x,y) derivatives");
    return -k * (u.d2(0, 0) + u.d2(1, 1)) - f;
}

std::array<double, 3> residual_ns(const Jet& u, const Jet& v, const Jet& p, double nu) {
    if (u.k != 3 || v.k != 3 || p.k != 3)
        throw ContractError("residual_ns: bundles must carry (x,y,t) derivatives");
    const double momx = u.d1(2) + u.v * u.d1(0) + v.v * u.d1(1) + p.d1(0) -
                        nu * (u.d2(0, 0) + u.d2(1, 1));
    const double momy = v.d1(2) + u.v * v.d1(0) + v.v * v.d1(1) + p.d1(1) -
                        nu * (v.d2(0, 0) + v.d2(1, 1));
    const double cont = u.d1(0) + v.d1(1);
    return {momx, momy, cont};
}

VarId residual_burgers_tape(Tape& t, VarId u, double nu) {
    VarId ut = t.pick1(u, 1);
    VarId ux = t.pick1(u, 0);
    VarId uxx = t.pick2(u, 0, 0);
    return t.sub(t.add(ut, t.mul(u, ux)), t.scale(uxx, nu));
}

VarId residual_heat_tape(Tape& t, VarId u, double k, double f) {
    VarId lap = t.add(t.pick2(u, 0, 0), t.pick2(u, 1, 1));
    return t.add_const(t.scale(lap, -k), -f);
}

std::array<VarId, 3> residual_ns_tape(Tape& t, VarId u, VarId v, VarId p, double nu) {
    VarId lap_u = t.add(t.pick2(u, 0, 0), t.pick2(u, 1, 1));
    VarId lap_v = t.add(t.pick2(v, 0, 0), t.pick2(v, 1, 1));
    VarId momx = t.add(t.pick1(u, 2), t.add(t.mul(u, t.pick1(u, 0)), t.mul(v, t.pick1(u, 1))));
    momx = t.sub(t.add(momx, t.pick1(p, 0)), t.scale(lap_u, nu));
    VarId momy = t.add(t.pick1(v, 2), t.add(t.mul(u, t.pick1(v, 0)), t.mul(v, t.pick1(v, 1))));
    momy = t.sub(t.add(momy, t.pick1(p, 1)), t.scale(lap_v, nu));
    VarId cont = t.add(t.pick1(u, 0), t.pick1(v, 1));
    return {momx, momy, cont};
}

// ---------------------------------------------------------------------------
// Problem definitions

PdeProblem PdeProblem::make(ProblemKind kind) {
    PdeProblem p;
    p.kind = kind;
    switch (kind) {
        case ProblemKind::Burgers:
            p.name = "burgers";
            p.spatial_dim = 1;
            p.is_transient = true;
            p.lo = {-1.0};
            p.hi = {1.0};
            p.t_end = 1.0;
            p.mu_lo = 0.001;
            p.mu_hi = 0.1;
            p.out_dim = 1;
            break;
        case ProblemKind::Heat:
            p.name = "heat";
            p.spatial_dim = 2;
            p.is_transient = false;
            p.lo = {0.0, 0.0};
            p.hi = {1.0, 1.0};
            p.t_end = 0.0;
            p.mu_lo = 0.1;
            p.mu_hi = 10.0;
            p.out_dim = 1;
            break;
        case ProblemKind::TaylorGreen:
            p.name = "taylor_green";
            p.spatial_dim = 2;
            p.is_transient = true;
            p.lo = {0.0, 0.0};
            p.hi = {2.0 * kPi, 2.0 * kPi};
            p.t_end = 5.0;
            p.mu_lo = 20.0;  // Reynolds number
            p.mu_hi = 100.0;
            p.out_dim = 3;
            break;
    }
    return p;
}

PdeProblem PdeProblem::from_name(const std::string& name) {
    if (name == "burgers") return make(ProblemKind::Burgers);
    if (name == "heat") return make(ProblemKind::Heat);
    if (name == "taylor_green") return make(ProblemKind::TaylorGreen);
    throw ConfigError("unknown problem: " + name);
}

double PdeProblem::residual_param(double mu) const {
    switch (kind) {
        case ProblemKind::Burgers: return mu;        // viscosity
        case ProblemKind::Heat: return mu;           // conductivity
        case ProblemKind::TaylorGreen: return 1.0 / mu; // nu = 1/Re
    }
    throw ContractError("residual_param: unknown problem");
}

std::vector<double> PdeProblem::oracle(std::span<const double> coords, double mu) const {
    if (int(coords.size()) != coord_dim()) throw ContractError("oracle: coordinate dim mismatch");
    switch (kind) {
        case ProblemKind::Burgers:
            return {burgers_cole_hopf<double>(coords[0], coords[1], mu)};
        case ProblemKind::Heat:
            return {heat_exact(coords[0], coords[1])};
        case ProblemKind::TaylorGreen: {
            auto f = taylor_green<double>(coords[0], coords[1], coords[2], residual_param(mu));
            return {f[0], f[1], f[2]};
        }
    }
    throw ContractError("oracle: unknown problem");
}

std::vector<double> PdeProblem::residual_of_bundle(std::span<const Jet> comps,
                                                   std::span<const double> coords,
                                                   double mu) const {
    if (int(comps.size()) != out_dim)
        throw ContractError("residual_of_bundle: component count mismatch");
    switch (kind) {
        case ProblemKind::Burgers:
            return {residual_burgers(comps[0], residual_param(mu))};
        case ProblemKind::Heat:
            return {residual_heat(comps[0], mu, source(coords, mu))};
        case ProblemKind::TaylorGreen: {
            auto r = residual_ns(comps[0], comps[1], comps[2], residual_param(mu));
            return {r[0], r[1], r[2]};
        }
    }
    throw ContractError("residual_of_bundle: unknown problem");
}

std::vector<VarId> PdeProblem::residual_on_tape(Tape& tape, const MfTaped& out,
                                                std::span<const double> coords, double mu) const {
    if (out.u_mf.n != out_dim) throw ContractError("residual_on_tape: component count mismatch");
    switch (kind) {
        case ProblemKind::Burgers:
            return {residual_burgers_tape(tape, out.u_mf[0], residual_param(mu))};
        case ProblemKind::Heat:
            return {residual_heat_tape(tape, out.u_mf[0], mu, source(coords, mu))};
        case ProblemKind::TaylorGreen: {
            auto r = residual_ns_tape(tape, out.u_mf[0], out.u_mf[1], out.u_mf[2],
                                      residual_param(mu));
            return {r[0], r[1], r[2]};
        }
    }
    throw ContractError("residual_on_tape: unknown problem");
}

double PdeProblem::source(std::span<const double> coords, double mu) const {
    if (kind != ProblemKind::Heat) return 0.0;
    return heat_source_term(coords[0], coords[1], mu);
}

std::vector<double> PdeProblem::boundary_target(std::span<const double> coords, double mu) const {
    switch (kind) {
        case ProblemKind::Burgers:
        case ProblemKind::Heat:
            return std::vector<double>(out_dim, 0.0);
        case ProblemKind::TaylorGreen:
            return oracle(coords, mu);
    }
    throw ContractError("boundary_target: unknown problem");
}

std::vector<double> PdeProblem::initial_target(std::span<const double> coords, double mu) const {
    switch (kind) {
        case ProblemKind::Burgers:
            return {-std::sin(kPi * coords[0])};
        case ProblemKind::TaylorGreen:
            return oracle(coords, mu);
        case ProblemKind::Heat:
            throw ContractError("initial_target: steady problem has no initial manifold");
    }
    throw ContractError("initial_target: unknown problem");
}

Normalization domain_normalization(const PdeProblem& prob) {
    Normalization n;
    n.lo = prob.lo;
    n.hi = prob.hi;
    if (prob.is_transient) {
        n.lo.push_back(0.0);
        n.hi.push_back(prob.t_end);
    }
    n.lo.push_back(prob.mu_lo);
    n.hi.push_back(prob.mu_hi);
    return n;
}

// ---------------------------------------------------------------------------
// Point sampling

namespace {

struct Box {
    std::vector<double> lo, hi; // joint box: coords then mu
};

Box joint_box(const PdeProblem& p) {
    Box b;
    b.lo = p.lo;
    b.hi = p.hi;
    if (p.is_transient) {
        b.lo.push_back(0.0);
        b.hi.push_back(p.t_end);
    }
    b.lo.push_back(p.mu_lo);
    b.hi.push_back(p.mu_hi);
    return b;
}

double stratified_mu(const PdeProblem& p, Rng& rng, int i, int n_param) {
    if (n_param > 0) {
        const int s = i % n_param;
        return p.mu_lo + (s + open_unit(rng)) / n_param * (p.mu_hi - p.mu_lo);
    }
    return p.mu_lo + open_unit(rng) * (p.mu_hi - p.mu_lo);
}

void sample_uniform_interior(const PdeProblem& p, int n, int n_param, Rng& rng, Points& out) {
    const Box b = joint_box(p);
    const int d = p.coord_dim();
    std::vector<double> row(d + 1);
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < d; ++a) row[a] = b.lo[a] + open_unit(rng) * (b.hi[a] - b.lo[a]);
        row[d] = stratified_mu(p, rng, i, n_param);
        out.push(row);
    }
}

void sample_lhs_interior(const PdeProblem& p, int n, Rng& rng, Points& out) {
    const Box b = joint_box(p);
    const int D = p.coord_dim() + 1;
    std::vector<std::vector<int>> perms(D);
    for (int a = 0; a < D; ++a) {
        perms[a].resize(n);
        for (int i = 0; i < n; ++i) perms[a][i] = i;
        for (int i = n - 1; i > 0; --i)
            std::swap(perms[a][i], perms[a][rng.uniform_int(i + 1)]);
    }
    std::vector<double> row(D);
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < D; ++a) {
            const double cell = (perms[a][i] + open_unit(rng)) / n;
            row[a] = b.lo[a] + cell * (b.hi[a] - b.lo[a]);
        }
        out.push(row);
    }
}

void sample_adaptive_interior(const PdeProblem& p, int n, Rng& rng, const ResidualField& field,
                              Points& out) {
    const Box b = joint_box(p);
    const int D = p.coord_dim() + 1;
    const int pool = std::max(2048, 4 * n);

    Points cand;
    cand.dim = D;
    std::vector<double> row(D);
    for (int i = 0; i < pool; ++i) {
        for (int a = 0; a < D; ++a) row[a] = b.lo[a] + open_unit(rng) * (b.hi[a] - b.lo[a]);
        cand.push(row);
    }
    std::vector<double> cdf(pool);
    double acc = 0.0;
    for (int i = 0; i < pool; ++i) {
        acc += std::abs(field(cand[i]));
        cdf[i] = acc;
    }

    const int n_adaptive = acc > 0.0 ? int(0.9 * n + 0.5) : 0;
    for (int i = 0; i < n_adaptive; ++i) {
        const double u = rng.uniform() * acc;
        const int idx = int(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        out.push(cand[std::min(idx, pool - 1)]);
    }
    for (int i = n_adaptive; i < n; ++i) {
        for (int a = 0; a < D; ++a) row[a] = b.lo[a] + open_unit(rng) * (b.hi[a] - b.lo[a]);
        out.push(row);
    }
}

} // namespace

CollocationSet sample_points(const PdeProblem& prob, int n_r, int n_b, int n_ic, int n_param,
                             Sampling strategy, uint64_t seed, const ResidualField* field) {
    if (n_r < 0 || n_b < 0 || n_ic < 0 || n_param < 0)
        throw ContractError("sample_points: negative count");

    CollocationSet cs;
    const int d = prob.coord_dim();
    cs.interior.dim = d + 1;
    cs.boundary.dim = d + 1;
    cs.initial.dim = d + 1;

    {
        Rng rng(seed, 0);
        switch (strategy) {
            case Sampling::Uniform:
                sample_uniform_interior(prob, n_r, n_param, rng, cs.interior);
                break;
            case Sampling::LatinHypercube:
                sample_lhs_interior(prob, n_r, rng, cs.interior);
                break;
            case Sampling::ResidualAdaptive:
                if (field == nullptr || !*field)
                    throw ContractError(
                        "sample_points: residual-adaptive strategy needs a residual field");
                sample_adaptive_interior(prob, n_r, rng, *field, cs.interior);
                break;
        }
    }

    {
        Rng rng(seed, 1);
        std::vector<double> row(d + 1);
        for (int i = 0; i < n_b; ++i) {
            switch (prob.kind) {
                case ProblemKind::Burgers:
                    row[0] = i % 2 == 0 ? prob.lo[0] : prob.hi[0];
                    row[1] = rng.uniform(0.0, prob.t_end);
                    break;
                case ProblemKind::Heat: {
                    const double s = rng.uniform(prob.lo[0], prob.hi[0]);
                    switch (i % 4) {
                        case 0: row[0] = s; row[1] = prob.lo[1]; break;
                        case 1: row[0] = s; row[1] = prob.hi[1]; break;
                        case 2: row[0] = prob.lo[0]; row[1] = s; break;
                        case 3: row[0] = prob.hi[0]; row[1] = s; break;
                    }
                    break;
                }
                case ProblemKind::TaylorGreen: {
                    const double s = rng.uniform(prob.lo[0], prob.hi[0]);
                    switch (i % 4) {
                        case 0: row[0] = s; row[1] = prob.lo[1]; break;
                        case 1: row[0] = s; row[1] = prob.hi[1]; break;
                        case 2: row[0] = prob.lo[0]; row[1] = s; break;
                        case 3: row[0] = prob.hi[0]; row[1] = s; break;
                    }
                    row[2] = rng.uniform(0.0, prob.t_end);
                    break;
                }
            }
            row[d] = stratified_mu(prob, rng, i, n_param);
            cs.boundary.push(row);
            auto tgt = prob.boundary_target(std::span<const double>(row).first(d), row[d]);
            cs.boundary_targets.insert(cs.boundary_targets.end(), tgt.begin(), tgt.end());
        }
    }

    if (prob.is_transient) {
        Rng rng(seed, 2);
        std::vector<double> row(d + 1);
        for (int i = 0; i < n_ic; ++i) {
            for (int a = 0; a < prob.spatial_dim; ++a)
                row[a] = rng.uniform(prob.lo[a], prob.hi[a]);
            row[prob.spatial_dim] = 0.0;
            row[d] = stratified_mu(prob, rng, i, n_param);
            cs.initial.push(row);
            auto tgt = prob.initial_target(std::span<const double>(row).first(d), row[d]);
            cs.initial_targets.insert(cs.initial_targets.end(), tgt.begin(), tgt.end());
        }
    }

    return cs;
}

} // namespace mfb
