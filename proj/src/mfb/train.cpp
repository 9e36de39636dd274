#include "train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <numeric>
#include <sstream>

#include "io.hpp"
#include "rng.hpp"

namespace mfb {
namespace {

constexpr double kPi = 3.14159265358979323846;

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

uint64_t mix_seed(uint64_t seed, uint64_t k) {
    uint64_t z = seed + (k + 1) * 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Batch index draw; empty result means "use the full set unsubsetted".
std::vector<int> batch_indices(Rng& rng, int n, int batch) {
    if (batch <= 0 || batch >= n) return {};
    return rng.sample_without_replacement(n, batch);
}

std::vector<int> identity_indices(int n) {
    std::vector<int> idx(static_cast<size_t>(n), 0);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

const PdeProblem& unused_problem() {
    static const PdeProblem p{};
    return p;
}

} // namespace

void TrainConfig::validate() const {
    if (lf_stage.epochs < 0 || mf_stage.epochs < 0 || lbfgs_iters < 0)
        throw ConfigError("TrainConfig: stage epochs must be >= 0");
    if (lf_stage.lr <= 0 || mf_stage.lr <= 0 || mf_lr_end <= 0)
        throw ConfigError("TrainConfig: learning rates must be positive");
    if (lbfgs_memory <= 0) throw ConfigError("TrainConfig: lbfgs_memory must be positive");
    if (n_interior < 0 || n_boundary < 0 || n_initial < 0 || n_param_strata < 0)
        throw ConfigError("TrainConfig: collocation counts must be >= 0");
    if (resample_every < 0 || balance_every < 0)
        throw ConfigError("TrainConfig: cadences must be >= 0");
    if (lf_lr_scale < 0) throw ConfigError("TrainConfig: lf_lr_scale must be >= 0");
    weights.validate();
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state,
               double lr, std::span<const double> lr_scale) {
    const size_t n = params.size();
    if (grad.size() != n) throw ContractError("adam_step: grad size does not match params");
    if (state.m.size() != n || state.v.size() != n)
        throw ContractError("adam_step: state dimensions do not match params");
    if (!lr_scale.empty() && lr_scale.size() != n)
        throw ContractError("adam_step: lr_scale size does not match params");

    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(b1, double(state.t));
    const double bc2 = 1.0 - std::pow(b2, double(state.t));
    for (size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double scale = lr_scale.empty() ? 1.0 : lr_scale[i];
        if (scale == 0.0) continue; // frozen: leave the parameter bitwise alone
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= scale * lr * mhat / (std::sqrt(vhat) + eps);
    }
}

namespace {

// phi(a) = f(x + a d) along a fixed direction; the last evaluation's point
// and gradient stay in xa/ga so a successful trial needs no recomputation.
struct LineEval {
    const ObjectiveFn& f;
    std::span<const double> x, d;
    std::vector<double>&xa, &ga;

    double operator()(double a, double& dphi) {
        for (size_t i = 0; i < x.size(); ++i) xa[i] = x[i] + a * d[i];
        const double v = f(xa, ga);
        if (!std::isfinite(v)) {
            dphi = std::numeric_limits<double>::infinity();
            return std::numeric_limits<double>::infinity();
        }
        dphi = dot(ga, d);
        return v;
    }
};

struct WolfeResult {
    double a = 0, f = 0, dphi = 0;
    bool ok = false;
};

constexpr double kC1 = 1e-4, kC2 = 0.9;

// The composite objective is only piecewise smooth in the parameters (the
// relu in the linear correlator makes second-derivative residuals jump when
// a pre-activation crosses zero), so the curvature condition can be
// unattainable at the 1-D minimum. When the bracket collapses without a
// strong-Wolfe point we fall back to the best sufficient-decrease trial;
// the s.y guard on the memory update handles the missing curvature check.
WolfeResult wolfe_zoom(LineEval& phi, double alo, double flo, double dlo, double ahi, double fhi,
                       double f0, double dphi0) {
    WolfeResult armijo_best;
    if (flo <= f0 + kC1 * alo * dphi0 && alo > 0) armijo_best = {alo, flo, dlo, false};
    for (int it = 0; it < 60; ++it) {
        // quadratic model through (alo, flo, dlo) and fhi; alternate with pure
        // bisection so the bracket shrinks geometrically even when the model
        // keeps proposing points next to an endpoint
        const double h = ahi - alo;
        double a = alo + 0.5 * h;
        if (it % 2 == 0) {
            const double c = (fhi - flo - dlo * h) / (h * h);
            if (std::isfinite(c) && c > 0) {
                const double cand = alo - dlo / (2.0 * c);
                const double lo = std::min(alo, ahi), hi = std::max(alo, ahi);
                const double margin = 0.1 * std::abs(h);
                if (cand > lo + margin && cand < hi - margin) a = cand;
            }
        }
        double dphi;
        const double fa = phi(a, dphi);
        if (fa > f0 + kC1 * a * dphi0 || fa >= flo) {
            ahi = a;
            fhi = fa;
        } else {
            if (std::abs(dphi) <= -kC2 * dphi0) return {a, fa, dphi, true};
            if (fa < armijo_best.f || armijo_best.a == 0) armijo_best = {a, fa, dphi, false};
            if (dphi * (ahi - alo) >= 0) {
                ahi = alo;
                fhi = flo;
            }
            alo = a;
            flo = fa;
            dlo = dphi;
        }
        if (std::abs(ahi - alo) <= 1e-16 * std::max(1.0, std::abs(alo))) break;
    }
    if (armijo_best.a > 0) {
        // re-evaluate so the caller's xa/ga buffers hold the accepted point
        double dphi;
        const double fa = phi(armijo_best.a, dphi);
        if (fa <= f0 + kC1 * armijo_best.a * dphi0) return {armijo_best.a, fa, dphi, true};
    }
    return {};
}

WolfeResult wolfe_search(LineEval& phi, double f0, double dphi0, double a_init) {
    double a_prev = 0, f_prev = f0, dphi_prev = dphi0;
    double a = a_init;
    for (int it = 0; it < 30; ++it) {
        double dphi;
        const double fa = phi(a, dphi);
        if (fa > f0 + kC1 * a * dphi0 || (it > 0 && fa >= f_prev))
            return wolfe_zoom(phi, a_prev, f_prev, dphi_prev, a, fa, f0, dphi0);
        if (std::abs(dphi) <= -kC2 * dphi0) return {a, fa, dphi, true};
        if (dphi >= 0) return wolfe_zoom(phi, a, fa, dphi, a_prev, f_prev, f0, dphi0);
        a_prev = a;
        f_prev = fa;
        dphi_prev = dphi;
        a *= 2.0;
        if (!(a < 1e20)) break;
    }
    return {};
}

} // namespace

LbfgsResult lbfgs_refine(std::span<const double> start, const ObjectiveFn& f, int max_iters,
                         int memory, const std::function<void(int, double, double)>& on_iter) {
    if (memory <= 0) throw ConfigError("lbfgs_refine: memory must be positive");
    if (max_iters < 0) throw ConfigError("lbfgs_refine: max_iters must be >= 0");
    const size_t n = start.size();

    LbfgsResult res;
    double best_f = std::numeric_limits<double>::infinity();
    std::vector<double> best_x(start.begin(), start.end());
    auto F = [&](std::span<const double> p, std::span<double> g) {
        double v = f(p, g);
        ++res.n_evals;
        if (std::isfinite(v)) {
            for (double gi : g)
                if (!std::isfinite(gi)) {
                    v = std::numeric_limits<double>::infinity();
                    break;
                }
        } else {
            v = std::numeric_limits<double>::infinity();
        }
        if (v < best_f) {
            best_f = v;
            best_x.assign(p.begin(), p.end());
        }
        return v;
    };

    const ObjectiveFn wrapped = F;
    std::vector<double> x(start.begin(), start.end()), g(n), xa(n), ga(n), q(n), d(n);
    double fx = F(x, g);
    if (!std::isfinite(fx)) {
        res.params = std::move(x);
        res.loss = fx;
        res.grad_norm = std::numeric_limits<double>::quiet_NaN();
        res.line_search_failed = true;
        return res;
    }
    double gnorm = norm2(g);

    std::deque<std::vector<double>> S, Y;
    std::deque<double> rho;
    std::vector<double> alpha;

    int it = 0;
    for (; it < max_iters; ++it) {
        if (gnorm <= 1e-8) {
            res.converged = true;
            break;
        }

        // two-loop recursion for d = -H g
        q.assign(g.begin(), g.end());
        const int m = int(S.size());
        alpha.assign(size_t(m), 0.0);
        for (int j = m - 1; j >= 0; --j) {
            alpha[j] = rho[j] * dot(S[j], q);
            for (size_t i = 0; i < n; ++i) q[i] -= alpha[j] * Y[j][i];
        }
        if (m > 0) {
            const double gamma = dot(S[m - 1], Y[m - 1]) / dot(Y[m - 1], Y[m - 1]);
            for (double& qi : q) qi *= gamma;
        }
        for (int j = 0; j < m; ++j) {
            const double beta = rho[j] * dot(Y[j], q);
            for (size_t i = 0; i < n; ++i) q[i] += (alpha[j] - beta) * S[j][i];
        }
        for (size_t i = 0; i < n; ++i) d[i] = -q[i];

        double dphi0 = dot(g, d);
        if (!(dphi0 < 0)) { // curvature breakdown: restart from steepest descent
            S.clear();
            Y.clear();
            rho.clear();
            for (size_t i = 0; i < n; ++i) d[i] = -g[i];
            dphi0 = -gnorm * gnorm;
        }

        const double a_init = S.empty() ? std::min(1.0, 1.0 / std::max(1e-12, gnorm)) : 1.0;
        LineEval line{wrapped, x, d, xa, ga};
        WolfeResult w = wolfe_search(line, fx, dphi0, a_init);
        if (!w.ok && !S.empty()) {
            // bad quasi-Newton direction: drop the memory and retry once along
            // steepest descent before declaring the search dead
            S.clear();
            Y.clear();
            rho.clear();
            for (size_t i = 0; i < n; ++i) d[i] = -g[i];
            dphi0 = -gnorm * gnorm;
            w = wolfe_search(line, fx, dphi0, std::min(1.0, 1.0 / std::max(1e-12, gnorm)));
        }
        if (!w.ok) {
            res.line_search_failed = true;
            break;
        }

        std::vector<double> s(n), y(n);
        for (size_t i = 0; i < n; ++i) {
            s[i] = xa[i] - x[i];
            y[i] = ga[i] - g[i];
        }
        const double sy = dot(s, y);
        if (sy > 1e-10 * norm2(s) * norm2(y)) {
            S.push_back(std::move(s));
            Y.push_back(std::move(y));
            rho.push_back(1.0 / sy);
            if (int(S.size()) > memory) {
                S.pop_front();
                Y.pop_front();
                rho.pop_front();
            }
        }
        x.assign(xa.begin(), xa.end());
        g.assign(ga.begin(), ga.end());
        fx = w.f;
        gnorm = norm2(g);
        if (on_iter) on_iter(it + 1, fx, gnorm);
    }

    res.iters = it;
    if (res.line_search_failed && best_f < fx) {
        res.params = best_x;
        res.loss = best_f;
        std::fill(ga.begin(), ga.end(), 0.0);
        F(best_x, ga);
        res.grad_norm = norm2(ga);
    } else {
        res.params = std::move(x);
        res.loss = fx;
        res.grad_norm = gnorm;
    }
    return res;
}

TrainReport pretrain_lf(MfModel& model, const Dataset& lf, const TrainConfig& config) {
    config.validate();
    if (lf.size() == 0) throw ContractError("pretrain_lf: LF dataset is empty");

    TrainReport rep;
    rep.stage_starts = {0};
    rep.stage_names = {"lf"};

    const size_t n = model.n_params();
    AdamState state(n);
    std::vector<double> grad(n), scale(n, 0.0);
    const auto lf_block = model.blocks()[0];
    std::fill(scale.begin() + lf_block.first, scale.begin() + lf_block.first + lf_block.second,
              1.0);

    Rng rng(config.seed, 10);
    const double t0 = now_s();
    for (int e = 0; e < config.lf_stage.epochs; ++e) {
        const Dataset* batch = &lf;
        Dataset tmp;
        const auto idx = batch_indices(rng, lf.size(), config.batch_lf);
        if (!idx.empty()) {
            tmp = subset_dataset(lf, idx);
            batch = &tmp;
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        LossBreakdown bd;
        try {
            bd = composite_loss(model, unused_problem(), batch, nullptr, nullptr, config.weights,
                                grad, false);
        } catch (const NumericError& err) {
            throw TrainingError(e - 1, std::string("pretrain_lf diverged: ") + err.what());
        }
        if (!std::isfinite(bd.total))
            throw TrainingError(e - 1, "pretrain_lf: loss became non-finite at epoch " +
                                           std::to_string(e));
        adam_step(model.params, grad, state, config.lf_stage.lr, scale);
        rep.history.push_back(bd);
        rep.lr_history.push_back(config.lf_stage.lr);
        rep.weight_history.push_back(config.weights);
    }
    rep.lf_time_s = now_s() - t0;
    rep.stage_params.push_back(model.params);
    rep.final_params = model.params;
    rep.final_weights = config.weights;
    return rep;
}

namespace {

ResidualField model_residual_field(const MfModel& model, const PdeProblem& prob) {
    return [&model, &prob](std::span<const double> pt) {
        const int cd = prob.coord_dim();
        std::vector<ad::Jet> in(size_t(cd) + 1);
        for (int dir = 0; dir < cd; ++dir) in[dir] = ad::Jet::seeded(pt[dir], dir, cd);
        in[cd] = ad::Jet::constant(pt[cd], cd);
        const auto out = forward_mf_jet(model, in);
        const auto r = prob.residual_of_bundle(out.u_mf, pt.first(cd), pt[cd]);
        double s = 0;
        for (double v : r) s += v * v;
        return std::sqrt(s);
    };
}

} // namespace

TrainReport train_mf(MfModel& model, const PdeProblem& prob, const Dataset* lf,
                     const Dataset* hf, const TrainConfig& config) {
    config.validate();
    if (lf != nullptr && lf->size() == 0) lf = nullptr;
    if (hf != nullptr && hf->size() == 0) hf = nullptr;

    TrainReport rep;
    if (config.no_gating && model.kind == ModelKind::Full) model.gate_mode = GateMode::FixedHalf;

    const bool do_pretrain = !config.no_lf_pretrain && lf != nullptr &&
                             model.kind == ModelKind::Full && config.lf_stage.epochs > 0;
    if (do_pretrain) {
        TrainReport pre = pretrain_lf(model, *lf, config);
        rep.history = std::move(pre.history);
        rep.lr_history = std::move(pre.lr_history);
        rep.weight_history = std::move(pre.weight_history);
        rep.stage_starts = {0};
        rep.stage_names = {"lf"};
        rep.stage_params.push_back(model.params);
        rep.lf_time_s = pre.lf_time_s;
    }

    const size_t n = model.n_params();
    LossWeights w = config.weights;

    const bool have_colloc = config.n_interior > 0 || config.n_boundary > 0 ||
                             config.n_initial > 0;
    ResidualField field = model_residual_field(model, prob);
    const ResidualField* field_ptr =
        config.sampling == Sampling::ResidualAdaptive ? &field : nullptr;
    CollocationSet colloc;
    uint64_t resample_count = 0;
    if (have_colloc)
        colloc = sample_points(prob, config.n_interior, config.n_boundary, config.n_initial,
                               config.n_param_strata, config.sampling,
                               mix_seed(config.seed, resample_count), field_ptr);

    // per-parameter step scaling: LF block fine-tunes slowly (or freezes)
    std::vector<double> scale;
    if (model.kind == ModelKind::Full) {
        scale.assign(n, 1.0);
        const auto lf_block = model.blocks()[0];
        std::fill(scale.begin() + lf_block.first,
                  scale.begin() + lf_block.first + lf_block.second,
                  config.freeze_lf ? 0.0 : config.lf_lr_scale);
    }

    // -- stage (ii): Adam over mini-batches --
    rep.stage_starts.push_back(int(rep.history.size()));
    rep.stage_names.push_back("adam");
    {
        AdamState state(n);
        std::vector<double> grad(n);
        Rng rng_lf(config.seed, 10), rng_hf(config.seed, 11), rng_int(config.seed, 12),
            rng_b(config.seed, 13), rng_ic(config.seed, 14);
        const int E = config.mf_stage.epochs;
        const double t0 = now_s();
        for (int e = 0; e < E; ++e) {
            const double frac = E > 1 ? double(e) / double(E - 1) : 0.0;
            const double lr = config.mf_lr_end + 0.5 * (config.mf_stage.lr - config.mf_lr_end) *
                                                     (1.0 + std::cos(kPi * frac));

            const Dataset *lf_b = lf, *hf_b = hf;
            Dataset lf_tmp, hf_tmp;
            if (lf != nullptr) {
                const auto idx = batch_indices(rng_lf, lf->size(), config.batch_lf);
                if (!idx.empty()) {
                    lf_tmp = subset_dataset(*lf, idx);
                    lf_b = &lf_tmp;
                }
            }
            if (hf != nullptr) {
                const auto idx = batch_indices(rng_hf, hf->size(), config.batch_hf);
                if (!idx.empty()) {
                    hf_tmp = subset_dataset(*hf, idx);
                    hf_b = &hf_tmp;
                }
            }
            const CollocationSet* cb = nullptr;
            CollocationSet cs_tmp;
            if (have_colloc) {
                auto ii = batch_indices(rng_int, colloc.interior.size(), config.batch_interior);
                auto bi = batch_indices(rng_b, colloc.boundary.size(), config.batch_boundary);
                auto ci = batch_indices(rng_ic, colloc.initial.size(), config.batch_initial);
                if (ii.empty() && bi.empty() && ci.empty()) {
                    cb = &colloc;
                } else {
                    if (ii.empty()) ii = identity_indices(colloc.interior.size());
                    if (bi.empty()) bi = identity_indices(colloc.boundary.size());
                    if (ci.empty()) ci = identity_indices(colloc.initial.size());
                    cs_tmp = subset_collocation(colloc, ii, bi, ci);
                    cb = &cs_tmp;
                }
            }

            std::fill(grad.begin(), grad.end(), 0.0);
            LossBreakdown bd;
            try {
                bd = composite_loss(model, prob, lf_b, hf_b, cb, w, grad, !config.no_residual);
            } catch (const NumericError& err) {
                throw TrainingError(int(rep.history.size()) - 1,
                                    std::string("train_mf diverged: ") + err.what());
            }
            if (!std::isfinite(bd.total))
                throw TrainingError(int(rep.history.size()) - 1,
                                    "train_mf: loss became non-finite at epoch " +
                                        std::to_string(e));
            adam_step(model.params, grad, state, lr, scale);
            rep.history.push_back(bd);
            rep.lr_history.push_back(lr);
            rep.weight_history.push_back(w);

            if (config.balance_every > 0 && (e + 1) % config.balance_every == 0)
                w = balance_weights(rep.history, w);
            if (have_colloc && config.resample_every > 0 && e + 1 < E &&
                (e + 1) % config.resample_every == 0)
                colloc = sample_points(prob, config.n_interior, config.n_boundary,
                                       config.n_initial, config.n_param_strata, config.sampling,
                                       mix_seed(config.seed, ++resample_count), field_ptr);
        }
        rep.adam_time_s = now_s() - t0;
    }
    rep.stage_params.push_back(model.params);

    // -- stage (iii): L-BFGS on the full fixed-snapshot objective --
    rep.stage_starts.push_back(int(rep.history.size()));
    rep.stage_names.push_back("lbfgs");
    if (config.lbfgs_iters > 0 && (lf != nullptr || hf != nullptr || have_colloc)) {
        const CollocationSet* cb = have_colloc ? &colloc : nullptr;
        LossBreakdown last_bd;
        ObjectiveFn obj = [&](std::span<const double> p, std::span<double> g) {
            std::copy(p.begin(), p.end(), model.params.begin());
            try {
                last_bd = composite_loss(model, prob, lf, hf, cb, w, g, !config.no_residual);
            } catch (const NumericError&) {
                std::fill(g.begin(), g.end(), 0.0);
                return std::numeric_limits<double>::infinity();
            }
            return last_bd.total;
        };
        const double t0 = now_s();
        const LbfgsResult res =
            lbfgs_refine(model.params, obj, config.lbfgs_iters, config.lbfgs_memory,
                         [&](int, double, double) {
                             rep.history.push_back(last_bd);
                             rep.lr_history.push_back(0.0);
                             rep.weight_history.push_back(w);
                         });
        rep.lbfgs_time_s = now_s() - t0;
        std::copy(res.params.begin(), res.params.end(), model.params.begin());
        rep.lbfgs_iters_done = res.iters;
        rep.lbfgs_warning = res.line_search_failed;
        rep.status = res.converged      ? "converged"
                     : res.line_search_failed ? "line-search"
                                              : "max-iters";
    }
    rep.stage_params.push_back(model.params);

    rep.final_params = model.params;
    rep.final_weights = w;
    const double mu = std::isnan(config.eval_mu) ? default_eval_mu(prob) : config.eval_mu;
    rep.final_mre = evaluate_mre(model, prob, mu);
    return rep;
}

double default_eval_mu(const PdeProblem& prob) {
    switch (prob.kind) {
        case ProblemKind::Burgers: return 0.01 / kPi;
        case ProblemKind::Heat: return 1.0;
        case ProblemKind::TaylorGreen: return 100.0;
    }
    throw ContractError("default_eval_mu: unknown problem kind");
}

double evaluate_mre(const MfModel& model, const PdeProblem& prob, double mu) {
    std::vector<int> dims;
    std::vector<double> lo, hi;
    switch (prob.kind) {
        case ProblemKind::Burgers:
            dims = {201, 101};
            lo = {prob.lo[0], 0.0};
            hi = {prob.hi[0], prob.t_end};
            break;
        case ProblemKind::Heat:
            dims = {101, 101};
            lo = {prob.lo[0], prob.lo[1]};
            hi = {prob.hi[0], prob.hi[1]};
            break;
        case ProblemKind::TaylorGreen:
            dims = {64, 64, 11};
            lo = {prob.lo[0], prob.lo[1], 0.0};
            hi = {prob.hi[0], prob.hi[1], prob.t_end};
            break;
    }
    const int cd = prob.coord_dim();
    const int C = prob.out_dim;
    if (int(dims.size()) != cd) throw ContractError("evaluate_mre: grid does not match problem");

    long long total = 1;
    for (int d : dims) total *= d;
    std::vector<double> in(size_t(cd) + 1);
    std::vector<double> sum_abs(size_t(C), 0.0), amax(size_t(C), 0.0);
    for (long long node = 0; node < total; ++node) {
        long long r = node;
        for (int a = 0; a < cd; ++a) {
            const int i = int(r % dims[a]);
            r /= dims[a];
            in[a] = dims[a] > 1 ? lo[a] + (hi[a] - lo[a]) * double(i) / double(dims[a] - 1)
                                : lo[a];
        }
        in[cd] = mu;
        const auto pred = forward_mf(model, in);
        const auto truth = prob.oracle(std::span<const double>(in).first(cd), mu);
        for (int c = 0; c < C; ++c) {
            sum_abs[c] += std::abs(pred.u_mf[c] - truth[c]);
            amax[c] = std::max(amax[c], std::abs(truth[c]));
        }
    }
    double mre = 0;
    for (int c = 0; c < C; ++c) mre += sum_abs[c] / (double(total) * (amax[c] + 1e-12));
    return mre / double(C);
}

void write_training_log(const TrainReport& report, const std::string& path) {
    std::ostringstream os;
    os << "epoch stage lr total l_lf l_hf l_residual l_bc l_ic"
          " lambda_hf lambda_r lambda_b lambda_ic\n";
    for (size_t i = 0; i < report.history.size(); ++i) {
        size_t stage = 0;
        for (size_t s = 0; s < report.stage_starts.size(); ++s)
            if (size_t(report.stage_starts[s]) <= i) stage = s;
        const LossBreakdown& bd = report.history[i];
        const LossWeights& wt =
            i < report.weight_history.size() ? report.weight_history[i] : report.final_weights;
        const double lr = i < report.lr_history.size() ? report.lr_history[i] : 0.0;
        os << i << ' ' << (stage < report.stage_names.size() ? report.stage_names[stage] : "?")
           << ' ' << fmt_double(lr) << ' ' << fmt_double(bd.total) << ' ' << fmt_double(bd.l_lf)
           << ' ' << fmt_double(bd.l_hf) << ' ' << fmt_double(bd.l_residual) << ' '
           << fmt_double(bd.l_bc) << ' ' << fmt_double(bd.l_ic) << ' '
           << fmt_double(wt.lambda_hf) << ' ' << fmt_double(wt.lambda_r) << ' '
           << fmt_double(wt.lambda_b) << ' ' << fmt_double(wt.lambda_ic) << '\n';
    }
    atomic_write_file(path, os.str());
}

} // namespace mfb
