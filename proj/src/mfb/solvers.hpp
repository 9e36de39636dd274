#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pde.hpp"

namespace mfb {

enum class Fidelity { LF, HF };
const char* fidelity_name(Fidelity f);
Fidelity fidelity_from_name(const std::string& tag);

enum class BurgersScheme { Muscl, Upwind };

/// Dense finite-difference (or sampled closed-form) field on a tensor grid.
/// Node index runs with axis 0 fastest; `values` holds out_dim entries per
/// node in that order.
struct GridSolution {
    std::vector<std::string> axes;       // coordinate names
    std::vector<std::string> components; // solution component names
    std::vector<int> shape;              // nodes per axis, each >= 2
    std::vector<double> lo, hi, spacing;
    int out_dim = 1;
    std::vector<double> values;
    double mu = 0.0;
    Fidelity fidelity = Fidelity::HF;
    std::string scheme;
    int steps = 0; // time steps or linear-solver iterations
    double runtime_s = 0.0;

    int dim() const { return int(shape.size()); }
    size_t n_nodes() const;
    std::vector<double> node_coords(size_t idx) const;
    std::span<const double> value(size_t idx) const;
    void validate() const;
};

/// Explicit solve of u_t + u u_x = nu u_xx on [-1,1] x [0,1] with Dirichlet
/// walls, initial condition -sin(pi x) unless overridden. nt = 0 picks a
/// stable step count; an explicit nt must satisfy the diffusion bound
/// dt <= dx^2/(2 nu) and the advective CFL bound dt <= dx/2.
GridSolution solve_burgers_fd(double nu, int nx, int nt = 0,
                              BurgersScheme scheme = BurgersScheme::Muscl,
                              const std::function<double(double)>& ic = nullptr);

/// 5-point solve of -k lap(u) = f on the unit square, zero Dirichlet walls,
/// conjugate gradients to relative residual 1e-10. Default f is the
/// manufactured heat source.
GridSolution solve_heat_fd(double k, int n,
                           const std::function<double(double, double)>& source = nullptr);

/// Taylor-Green fields tabulated on an n_space^2 x n_time grid over
/// [0,2pi]^2 x [0,5]; mu stores the Reynolds number.
GridSolution make_taylor_green_grid(double re, int n_space, int n_time);

/// Multilinear interpolation of all components; coords are clamped to the box.
std::vector<double> interpolate(const GridSolution& sol, std::span<const double> coords);

struct Dataset {
    std::vector<std::string> coord_names; // excludes mu
    std::vector<std::string> label_names;
    Points points; // rows hold coords then mu
    std::vector<double> labels;
    int out_dim = 1;
    Fidelity fidelity = Fidelity::LF;
    double noise_sd = 0.0;

    int size() const { return points.size(); }
    std::span<const double> label(int i) const {
        return {labels.data() + size_t(i) * out_dim, size_t(out_dim)};
    }
};

/// n grid nodes drawn without replacement; labels get N(0, noise_sd^2) noise.
Dataset sample_dataset(const GridSolution& sol, int n, double noise_sd, uint64_t seed);

/// n uniform points in the grid box labeled by multilinear interpolation, so
/// labels inherit the grid's resolution error even off the nodes.
Dataset sample_interpolated(const GridSolution& sol, int n, double noise_sd, uint64_t seed);

/// Every node as one sample (plotting/export helper).
Dataset grid_as_dataset(const GridSolution& sol);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

using FieldFn = std::function<std::vector<double>(std::span<const double>)>;

/// Relative L2 error over all grid nodes against an exact field.
double grid_rel_l2_error(const GridSolution& sol, const FieldFn& exact);
double grid_max_error(const GridSolution& sol, const FieldFn& exact);

/// Relative L2 error at n uniform probe points, grid read by interpolation.
double field_rel_l2_error(const GridSolution& sol, const FieldFn& exact, int n, uint64_t seed);

} // namespace mfb
