#include "solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "errors.hpp"
#include "io.hpp"
#include "rng.hpp"

namespace mfb {

namespace {
constexpr double kPi = 3.14159265358979323846;

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}
} // namespace

const char* fidelity_name(Fidelity f) { return f == Fidelity::LF ? "LF" : "HF"; }

Fidelity fidelity_from_name(const std::string& tag) {
    if (tag == "LF") return Fidelity::LF;
    if (tag == "HF") return Fidelity::HF;
    throw ConfigError("unknown fidelity tag: " + tag);
}

size_t GridSolution::n_nodes() const {
    size_t n = 1;
    for (int s : shape) n *= size_t(s);
    return n;
}

std::vector<double> GridSolution::node_coords(size_t idx) const {
    std::vector<double> c(shape.size());
    for (size_t a = 0; a < shape.size(); ++a) {
        c[a] = lo[a] + double(idx % shape[a]) * spacing[a];
        idx /= shape[a];
    }
    return c;
}

std::span<const double> GridSolution::value(size_t idx) const {
    return {values.data() + idx * out_dim, size_t(out_dim)};
}

void GridSolution::validate() const {
    const size_t d = shape.size();
    if (d == 0 || axes.size() != d || lo.size() != d || hi.size() != d || spacing.size() != d)
        throw ContractError("GridSolution: axis metadata sizes disagree");
    for (int s : shape)
        if (s < 2) throw ContractError("GridSolution: every axis needs at least 2 nodes");
    if (out_dim < 1 || int(components.size()) != out_dim)
        throw ContractError("GridSolution: component names do not match out_dim");
    if (values.size() != n_nodes() * size_t(out_dim))
        throw ContractError("GridSolution: value array does not match grid shape");
}

// ---------------------------------------------------------------------------
// Burgers

namespace {

double minmod(double a, double b) {
    if (a * b <= 0.0) return 0.0;
    return std::abs(a) < std::abs(b) ? a : b;
}

// du/dt at every node; walls held at zero. Ghost nodes extend the field
// oddly about each wall, consistent with the zero Dirichlet value.
void burgers_rhs(BurgersScheme scheme, const std::vector<double>& v, double nu, double dx,
                 std::vector<double>& out, std::vector<double>& flux) {
    const int nx = int(v.size()) - 1;
    auto at = [&](int i) -> double {
        if (i < 0) return -v[-i];
        if (i > nx) return -v[2 * nx - i];
        return v[i];
    };
    const double inv_dx = 1.0 / dx;
    const double inv_dx2 = inv_dx * inv_dx;

    if (scheme == BurgersScheme::Muscl) {
        // flux[i] sits between nodes i and i+1
        for (int i = 0; i < nx; ++i) {
            const double ul = at(i) + 0.5 * minmod(at(i) - at(i - 1), at(i + 1) - at(i));
            const double ur =
                at(i + 1) - 0.5 * minmod(at(i + 1) - at(i), at(i + 2) - at(i + 1));
            const double a = std::max(std::abs(ul), std::abs(ur));
            flux[i] = 0.25 * (ul * ul + ur * ur) - 0.5 * a * (ur - ul);
        }
        for (int i = 1; i < nx; ++i)
            out[i] = -(flux[i] - flux[i - 1]) * inv_dx +
                     nu * (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv_dx2;
    } else {
        for (int i = 1; i < nx; ++i) {
            const double adv = v[i] >= 0.0 ? v[i] * (v[i] - at(i - 1)) * inv_dx
                                           : v[i] * (at(i + 1) - v[i]) * inv_dx;
            out[i] = -adv + nu * (v[i + 1] - 2.0 * v[i] + v[i - 1]) * inv_dx2;
        }
    }
    out[0] = out[nx] = 0.0;
}

} // namespace

GridSolution solve_burgers_fd(double nu, int nx, int nt, BurgersScheme scheme,
                              const std::function<double(double)>& ic) {
    if (!(nu > 0.0)) throw ConfigError("solve_burgers_fd: nu must be positive");
    if (nx < 8) throw ConfigError("solve_burgers_fd: nx must be at least 8");
    if (nt < 0) throw ConfigError("solve_burgers_fd: nt must be nonnegative");
    const double t0 = now_s();
    const double t_end = 1.0;
    const double dx = 2.0 / nx;
    const double diff_bound = dx * dx / (2.0 * nu);
    const double cfl_bound = 0.5 * dx; // Courant 1/2 at |u| <= 1 (TVD limit)

    if (nt == 0) {
        // harmonic combination keeps the sum of both stability fractions < 1
        const double dt_stable = 0.9 / (1.0 / diff_bound + 1.0 / cfl_bound);
        nt = int(std::ceil(t_end / dt_stable));
    } else {
        const double dt = t_end / nt;
        std::ostringstream msg;
        if (dt > diff_bound) {
            msg << "solve_burgers_fd: dt=" << dt << " violates the diffusion stability bound "
                << "dx^2/(2*nu)=" << diff_bound;
            throw ConfigError(msg.str());
        }
        if (dt > cfl_bound) {
            msg << "solve_burgers_fd: dt=" << dt << " violates the advective CFL bound dx/2="
                << cfl_bound;
            throw ConfigError(msg.str());
        }
    }
    const double dt = t_end / nt;

    GridSolution sol;
    sol.axes = {"x", "t"};
    sol.components = {"u"};
    sol.shape = {nx + 1, nt + 1};
    sol.lo = {-1.0, 0.0};
    sol.hi = {1.0, t_end};
    sol.spacing = {dx, dt};
    sol.out_dim = 1;
    sol.mu = nu;
    sol.fidelity = nx >= 128 ? Fidelity::HF : Fidelity::LF;
    sol.scheme = scheme == BurgersScheme::Muscl ? "muscl-rusanov-rk2" : "upwind-rk2";
    sol.steps = nt;
    sol.values.resize(size_t(nx + 1) * (nt + 1));

    std::vector<double> u(nx + 1), stage(nx + 1), k1(nx + 1), k2(nx + 1), flux(nx);
    for (int i = 0; i <= nx; ++i) {
        const double x = -1.0 + i * dx;
        u[i] = ic ? ic(x) : -std::sin(kPi * x);
    }
    u[0] = u[nx] = 0.0;
    std::copy(u.begin(), u.end(), sol.values.begin());

    for (int it = 1; it <= nt; ++it) {
        burgers_rhs(scheme, u, nu, dx, k1, flux);
        for (int i = 0; i <= nx; ++i) stage[i] = u[i] + dt * k1[i];
        stage[0] = stage[nx] = 0.0;
        burgers_rhs(scheme, stage, nu, dx, k2, flux);
        for (int i = 0; i <= nx; ++i) u[i] += 0.5 * dt * (k1[i] + k2[i]);
        u[0] = u[nx] = 0.0;
        if (it % 128 == 0 || it == nt) {
            double peak = 0.0;
            for (double v : u) peak = std::max(peak, std::abs(v));
            if (!std::isfinite(peak) || peak > 1e3)
                throw NumericError("solve_burgers_fd", "solution diverged");
        }
        std::copy(u.begin(), u.end(), sol.values.begin() + size_t(it) * (nx + 1));
    }
    sol.runtime_s = now_s() - t0;
    return sol;
}

// ---------------------------------------------------------------------------
// Heat

GridSolution solve_heat_fd(double k, int n, const std::function<double(double, double)>& source) {
    if (!(k > 0.0)) throw ConfigError("solve_heat_fd: k must be positive");
    if (n < 8) throw ConfigError("solve_heat_fd: n must be at least 8");
    const double t0 = now_s();
    const double h = 1.0 / n;
    const int m = n - 1; // interior nodes per axis

    auto f = [&](double x, double y) {
        return source ? source(x, y) : heat_source_term(x, y, k);
    };

    // CG on -k*lap_h(u) = f over the interior
    std::vector<double> b(size_t(m) * m), x(b.size(), 0.0), r(b.size()), p(b.size()),
        ap(b.size());
    for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i) b[size_t(j) * m + i] = f((i + 1) * h, (j + 1) * h);

    auto apply = [&](const std::vector<double>& v, std::vector<double>& out) {
        const double c = k / (h * h);
        for (int j = 0; j < m; ++j)
            for (int i = 0; i < m; ++i) {
                const size_t idx = size_t(j) * m + i;
                double s = 4.0 * v[idx];
                if (i > 0) s -= v[idx - 1];
                if (i + 1 < m) s -= v[idx + 1];
                if (j > 0) s -= v[idx - m];
                if (j + 1 < m) s -= v[idx + m];
                out[idx] = c * s;
            }
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& c) {
        double s = 0;
        for (size_t i = 0; i < a.size(); ++i) s += a[i] * c[i];
        return s;
    };

    const double bnorm = std::sqrt(dot(b, b));
    const double tol = 1e-10 * (bnorm > 0 ? bnorm : 1.0);
    r = b;
    p = r;
    double rr = dot(r, r);
    int iters = 0;
    const int max_iters = 40 * n + 200;
    while (std::sqrt(rr) > tol) {
        if (iters++ >= max_iters) {
            std::ostringstream msg;
            msg << "conjugate gradients stalled: residual " << std::sqrt(rr) << " after "
                << max_iters << " iterations (target " << tol << ")";
            throw NumericError("solve_heat_fd", msg.str());
        }
        apply(p, ap);
        const double alpha = rr / dot(p, ap);
        for (size_t i = 0; i < x.size(); ++i) x[i] += alpha * p[i];
        for (size_t i = 0; i < r.size(); ++i) r[i] -= alpha * ap[i];
        const double rr_new = dot(r, r);
        const double beta = rr_new / rr;
        rr = rr_new;
        for (size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
    }

    GridSolution sol;
    sol.axes = {"x", "y"};
    sol.components = {"u"};
    sol.shape = {n + 1, n + 1};
    sol.lo = {0.0, 0.0};
    sol.hi = {1.0, 1.0};
    sol.spacing = {h, h};
    sol.out_dim = 1;
    sol.mu = k;
    sol.fidelity = n >= 128 ? Fidelity::HF : Fidelity::LF;
    sol.scheme = "5pt-cg";
    sol.steps = iters;
    sol.values.assign(size_t(n + 1) * (n + 1), 0.0);
    for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i)
            sol.values[size_t(j + 1) * (n + 1) + (i + 1)] = x[size_t(j) * m + i];
    sol.runtime_s = now_s() - t0;
    return sol;
}

// ---------------------------------------------------------------------------
// Taylor-Green tabulation

GridSolution make_taylor_green_grid(double re, int n_space, int n_time) {
    if (!(re > 0.0)) throw ConfigError("make_taylor_green_grid: re must be positive");
    if (n_space < 8) throw ConfigError("make_taylor_green_grid: n_space must be at least 8");
    if (n_time < 2) throw ConfigError("make_taylor_green_grid: n_time must be at least 2");
    const double t0 = now_s();
    const double L = 2.0 * kPi, t_end = 5.0;
    const double nu = 1.0 / re;
    const int sx = n_space + 1;

    GridSolution sol;
    sol.axes = {"x", "y", "t"};
    sol.components = {"u", "v", "p"};
    sol.shape = {sx, sx, n_time};
    sol.lo = {0.0, 0.0, 0.0};
    sol.hi = {L, L, t_end};
    sol.spacing = {L / n_space, L / n_space, t_end / (n_time - 1)};
    sol.out_dim = 3;
    sol.mu = re;
    sol.fidelity = n_space >= 128 ? Fidelity::HF : Fidelity::LF;
    sol.scheme = "closed-form";
    sol.steps = 0;
    sol.values.resize(size_t(sx) * sx * n_time * 3);

    size_t idx = 0;
    for (int it = 0; it < n_time; ++it) {
        const double t = it * sol.spacing[2];
        for (int iy = 0; iy < sx; ++iy) {
            const double y = iy * sol.spacing[1];
            for (int ix = 0; ix < sx; ++ix) {
                const double x = ix * sol.spacing[0];
                auto f = taylor_green<double>(x, y, t, nu);
                sol.values[idx++] = f[0];
                sol.values[idx++] = f[1];
                sol.values[idx++] = f[2];
            }
        }
    }
    sol.runtime_s = now_s() - t0;
    return sol;
}

// ---------------------------------------------------------------------------
// Interpolation and sampling

std::vector<double> interpolate(const GridSolution& sol, std::span<const double> coords) {
    const int d = sol.dim();
    if (int(coords.size()) != d) throw ContractError("interpolate: coordinate dim mismatch");
    int cell[3];
    double frac[3];
    for (int a = 0; a < d; ++a) {
        double s = (std::clamp(coords[a], sol.lo[a], sol.hi[a]) - sol.lo[a]) / sol.spacing[a];
        int c = std::min(int(s), sol.shape[a] - 2);
        cell[a] = c;
        frac[a] = s - c;
    }
    std::vector<double> out(sol.out_dim, 0.0);
    size_t stride[3];
    stride[0] = 1;
    for (int a = 1; a < d; ++a) stride[a] = stride[a - 1] * sol.shape[a - 1];
    for (int corner = 0; corner < (1 << d); ++corner) {
        double w = 1.0;
        size_t idx = 0;
        for (int a = 0; a < d; ++a) {
            const int bit = (corner >> a) & 1;
            w *= bit ? frac[a] : 1.0 - frac[a];
            idx += stride[a] * size_t(cell[a] + bit);
        }
        if (w == 0.0) continue;
        auto v = sol.value(idx);
        for (int c = 0; c < sol.out_dim; ++c) out[c] += w * v[c];
    }
    return out;
}

namespace {

Dataset dataset_shell(const GridSolution& sol, double noise_sd) {
    Dataset ds;
    ds.coord_names = sol.axes;
    ds.label_names = sol.components;
    ds.points.dim = sol.dim() + 1;
    ds.out_dim = sol.out_dim;
    ds.fidelity = sol.fidelity;
    ds.noise_sd = noise_sd;
    return ds;
}

void push_sample(Dataset& ds, const GridSolution& sol, std::span<const double> coords,
                 std::span<const double> label, double noise_sd, Rng& rng) {
    std::vector<double> row(coords.begin(), coords.end());
    row.push_back(sol.mu);
    ds.points.push(row);
    for (double v : label)
        ds.labels.push_back(noise_sd > 0 ? v + noise_sd * rng.normal() : v);
}

} // namespace

Dataset sample_dataset(const GridSolution& sol, int n, double noise_sd, uint64_t seed) {
    sol.validate();
    if (noise_sd < 0) throw ContractError("sample_dataset: noise_sd must be nonnegative");
    const size_t nodes = sol.n_nodes();
    if (n < 0 || size_t(n) > nodes)
        throw ContractError("sample_dataset: n exceeds the grid point count");

    Rng rng(seed, 0);
    auto idx = rng.sample_without_replacement(int(nodes), n);
    Dataset ds = dataset_shell(sol, noise_sd);
    for (int i : idx) {
        auto c = sol.node_coords(size_t(i));
        push_sample(ds, sol, c, sol.value(size_t(i)), noise_sd, rng);
    }
    return ds;
}

Dataset sample_interpolated(const GridSolution& sol, int n, double noise_sd, uint64_t seed) {
    sol.validate();
    if (n < 0) throw ContractError("sample_interpolated: n must be nonnegative");
    if (noise_sd < 0) throw ContractError("sample_interpolated: noise_sd must be nonnegative");

    Rng rng(seed, 0);
    Dataset ds = dataset_shell(sol, noise_sd);
    std::vector<double> c(sol.dim());
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < sol.dim(); ++a) c[a] = rng.uniform(sol.lo[a], sol.hi[a]);
        auto label = interpolate(sol, c);
        push_sample(ds, sol, c, label, noise_sd, rng);
    }
    return ds;
}

Dataset grid_as_dataset(const GridSolution& sol) {
    sol.validate();
    Rng rng(0, 0);
    Dataset ds = dataset_shell(sol, 0.0);
    for (size_t i = 0; i < sol.n_nodes(); ++i) {
        auto c = sol.node_coords(i);
        push_sample(ds, sol, c, sol.value(i), 0.0, rng);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Columnar text I/O

void write_dataset(const Dataset& ds, const std::string& path) {
    if (int(ds.coord_names.size()) + 1 != ds.points.dim ||
        int(ds.label_names.size()) != ds.out_dim)
        throw ContractError("write_dataset: column names do not match the dataset");
    std::string out;
    out.reserve(size_t(ds.size()) * 64 + 64);
    for (const auto& n : ds.coord_names) out += n + " ";
    out += "mu ";
    for (const auto& n : ds.label_names) out += n + " ";
    out += "fidelity noise_sd\n";
    const std::string tail =
        std::string(" ") + fidelity_name(ds.fidelity) + " " + fmt_double(ds.noise_sd) + "\n";
    for (int i = 0; i < ds.size(); ++i) {
        auto row = ds.points[i];
        for (double v : row) {
            out += fmt_double(v);
            out += ' ';
        }
        auto lab = ds.label(i);
        for (int c = 0; c < ds.out_dim; ++c) {
            out += fmt_double(lab[c]);
            if (c + 1 < ds.out_dim) out += ' ';
        }
        out += tail;
    }
    atomic_write_file(path, out);
}

Dataset read_dataset(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string header;
    if (!std::getline(in, header)) throw ConfigError("read_dataset: empty file: " + path);

    std::vector<std::string> cols;
    {
        std::istringstream hs(header);
        std::string tok;
        while (hs >> tok) cols.push_back(tok);
    }
    const auto mu_it = std::find(cols.begin(), cols.end(), "mu");
    const auto fid_it = std::find(cols.begin(), cols.end(), "fidelity");
    if (mu_it == cols.end() || fid_it == cols.end() || fid_it < mu_it ||
        cols.empty() || cols.back() != "noise_sd")
        throw ConfigError("read_dataset: malformed header: " + header);

    Dataset ds;
    ds.coord_names.assign(cols.begin(), mu_it);
    ds.label_names.assign(mu_it + 1, fid_it);
    ds.points.dim = int(ds.coord_names.size()) + 1;
    ds.out_dim = int(ds.label_names.size());
    if (ds.out_dim < 1) throw ConfigError("read_dataset: no label columns: " + path);

    std::string line;
    std::vector<double> row(ds.points.dim);
    int line_no = 1;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        for (double& v : row)
            if (!(ls >> v))
                throw ConfigError("read_dataset: bad row at line " + std::to_string(line_no));
        ds.points.push(row);
        for (int c = 0; c < ds.out_dim; ++c) {
            double v;
            if (!(ls >> v))
                throw ConfigError("read_dataset: bad row at line " + std::to_string(line_no));
            ds.labels.push_back(v);
        }
        std::string fid;
        double noise;
        if (!(ls >> fid >> noise))
            throw ConfigError("read_dataset: bad row at line " + std::to_string(line_no));
        if (first) {
            ds.fidelity = fidelity_from_name(fid);
            ds.noise_sd = noise;
            first = false;
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Error measures

double grid_rel_l2_error(const GridSolution& sol, const FieldFn& exact) {
    double num = 0, den = 0;
    for (size_t i = 0; i < sol.n_nodes(); ++i) {
        auto c = sol.node_coords(i);
        auto want = exact(c);
        auto got = sol.value(i);
        for (int k = 0; k < sol.out_dim; ++k) {
            num += (got[k] - want[k]) * (got[k] - want[k]);
            den += want[k] * want[k];
        }
    }
    return std::sqrt(num / (den > 0 ? den : 1.0));
}

double grid_max_error(const GridSolution& sol, const FieldFn& exact) {
    double worst = 0;
    for (size_t i = 0; i < sol.n_nodes(); ++i) {
        auto c = sol.node_coords(i);
        auto want = exact(c);
        auto got = sol.value(i);
        for (int k = 0; k < sol.out_dim; ++k)
            worst = std::max(worst, std::abs(got[k] - want[k]));
    }
    return worst;
}

double field_rel_l2_error(const GridSolution& sol, const FieldFn& exact, int n, uint64_t seed) {
    Rng rng(seed, 0);
    std::vector<double> c(sol.dim());
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < sol.dim(); ++a) c[a] = rng.uniform(sol.lo[a], sol.hi[a]);
        auto want = exact(c);
        auto got = interpolate(sol, c);
        for (int k = 0; k < sol.out_dim; ++k) {
            num += (got[k] - want[k]) * (got[k] - want[k]);
            den += want[k] * want[k];
        }
    }
    return std::sqrt(num / (den > 0 ? den : 1.0));
}

} // namespace mfb
