#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jet.hpp"
#include "network.hpp"
#include "tape.hpp"

namespace mfb {

enum class ProblemKind { Burgers, Heat, TaylorGreen };
enum class Sampling { Uniform, LatinHypercube, ResidualAdaptive };

Sampling sampling_from_name(const std::string& tag);
const char* sampling_name(Sampling s);

/// Row-major point list; each row holds the coordinates followed by mu.
struct Points {
    int dim = 0;
    std::vector<double> data;

    int size() const { return dim == 0 ? 0 : int(data.size() / dim); }
    std::span<const double> operator[](int i) const {
        return {data.data() + size_t(i) * dim, size_t(dim)};
    }
    void push(std::span<const double> p) { data.insert(data.end(), p.begin(), p.end()); }
};

struct CollocationSet {
    Points interior;
    Points boundary;
    std::vector<double> boundary_targets; // out_dim values per boundary point
    Points initial;
    std::vector<double> initial_targets;  // out_dim values per initial point
};

// Benchmark definition: domain, parameter range, residual operator, boundary
// and initial manifolds, and the ground-truth oracle.
//
// Coordinate order everywhere: spatial axes, then time (transient problems),
// then mu as the final entry of a sampled point. Derivative direction d of a
// jet bundle corresponds to coordinate d.
struct PdeProblem {
    ProblemKind kind = ProblemKind::Burgers;
    std::string name;
    int spatial_dim = 1;
    bool is_transient = true;
    std::vector<double> lo, hi; // spatial box
    double t_end = 0.0;
    double mu_lo = 0.0, mu_hi = 1.0;
    int out_dim = 1;

    int coord_dim() const { return spatial_dim + (is_transient ? 1 : 0); }
    int point_dim() const { return coord_dim() + 1; }

    /// Physical parameter entering the residual (Burgers: nu = mu; heat:
    /// conductivity k = mu; Taylor-Green: nu = 1/Re).
    double residual_param(double mu) const;

    std::vector<double> oracle(std::span<const double> coords, double mu) const;

    /// Residual of an arbitrary field given one jet bundle per component.
    std::vector<double> residual_of_bundle(std::span<const ad::Jet> comps,
                                           std::span<const double> coords, double mu) const;

    /// Taped residual components for the composite model output.
    std::vector<ad::VarId> residual_on_tape(ad::Tape& tape, const MfTaped& out,
                                            std::span<const double> coords, double mu) const;

    /// Heat source term; zero for the other problems.
    double source(std::span<const double> coords, double mu) const;

    /// Exact boundary/initial targets at a point on the respective manifold.
    std::vector<double> boundary_target(std::span<const double> coords, double mu) const;
    std::vector<double> initial_target(std::span<const double> coords, double mu) const;

    static PdeProblem make(ProblemKind kind);
    static PdeProblem from_name(const std::string& name);
};

/// Normalization bounds covering the problem's coords plus the mu axis.
Normalization domain_normalization(const PdeProblem& prob);

// Residual operators on second-order jet bundles. Direction convention:
// Burgers (x, t); heat (x, y); Navier-Stokes (x, y, t).
double residual_burgers(const ad::Jet& u, double nu);
double residual_heat(const ad::Jet& u, double k, double f);
std::array<double, 3> residual_ns(const ad::Jet& u, const ad::Jet& v, const ad::Jet& p,
                                  double nu);

ad::VarId residual_burgers_tape(ad::Tape& t, ad::VarId u, double nu);
ad::VarId residual_heat_tape(ad::Tape& t, ad::VarId u, double k, double f);
std::array<ad::VarId, 3> residual_ns_tape(ad::Tape& t, ad::VarId u, ad::VarId v, ad::VarId p,
                                          double nu);

/// Cole-Hopf solution of Burgers with u(x,0) = -sin(pi x) on [-1,1],
/// evaluated by Gauss-Hermite quadrature. T is double or Jet (seed x as
/// direction 0 and t as direction 1 for residual checks).
template <class T>
T burgers_cole_hopf(const T& x, const T& t, double nu);

/// Taylor-Green vortex fields (u, v, p) on [0, 2pi]^2.
template <class T>
std::array<T, 3> taylor_green(const T& x, const T& y, const T& t, double nu);

double heat_exact(double x, double y);
double heat_source_term(double x, double y, double k);

struct GaussHermite {
    std::vector<double> nodes, weights;
};
/// Nodes and weights for \int g(z) e^{-z^2} dz, cached per order.
const GaussHermite& gauss_hermite(int n);

using ResidualField = std::function<double(std::span<const double>)>;

/// Draws interior/boundary/initial point sets. `n_param` > 0 stratifies the
/// mu axis of uniform draws into that many bins; latin-hypercube covers mu as
/// one of its axes. ResidualAdaptive requires `residual_field` (absolute
/// residual magnitude over a point) and concentrates 90% of interior points
/// proportional to it, with a 10% uniform exploration floor.
CollocationSet sample_points(const PdeProblem& prob, int n_r, int n_b, int n_ic, int n_param,
                             Sampling strategy, uint64_t seed,
                             const ResidualField* residual_field = nullptr);

} // namespace mfb
