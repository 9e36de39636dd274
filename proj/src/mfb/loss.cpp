#include "loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "errors.hpp"

namespace mfb {

using ad::Jet;
using ad::Tape;
using ad::VarId;

void LossWeights::validate() const {
    for (double v : {lambda_hf, lambda_r, lambda_b, lambda_ic})
        if (!(v > 0.0) || !std::isfinite(v))
            throw ConfigError("LossWeights: weights must be positive and finite");
}

namespace {

void check_dataset(const MfModel& model, const Dataset& ds, const char* where) {
    if (ds.size() == 0) throw ContractError(std::string(where) + ": empty dataset");
    if (ds.points.dim != model.input_dim())
        throw ContractError(std::string(where) + ": sample dim does not match the model");
    if (ds.out_dim != model.output_dim())
        throw ContractError(std::string(where) + ": label dim does not match the model");
}

double plain_data_mse(const MfModel& model, const Dataset& ds, bool through_mf) {
    const int n = ds.size(), c = ds.out_dim;
    const double scale = 1.0 / (double(n) * c);
    double loss = 0;
    for (int i = 0; i < n; ++i) {
        auto out = through_mf ? forward_mf(model, ds.points[i]).u_mf
                              : forward_lf(model, ds.points[i]);
        auto lab = ds.label(i);
        for (int k = 0; k < c; ++k) {
            const double e = out[k] - lab[k];
            loss += scale * e * e;
        }
    }
    return loss;
}

} // namespace

double loss_lf(const MfModel& model, const Dataset& lf) {
    check_dataset(model, lf, "loss_lf");
    return plain_data_mse(model, lf, false);
}

double loss_hf(const MfModel& model, const Dataset& hf) {
    check_dataset(model, hf, "loss_hf");
    return plain_data_mse(model, hf, true);
}

double loss_residual(const MfModel& model, const CollocationSet& colloc,
                     const PdeProblem& prob) {
    const Points& pts = colloc.interior;
    if (pts.size() == 0) throw ContractError("loss_residual: no interior points");
    const int k = prob.coord_dim();
    if (pts.dim != k + 1) throw ContractError("loss_residual: point dim does not match problem");

    double loss = 0;
    std::vector<Jet> jin(k + 1);
    for (int i = 0; i < pts.size(); ++i) {
        auto row = pts[i];
        for (int a = 0; a < k; ++a) jin[a] = Jet::seeded(row[a], a, k);
        jin[k] = Jet::constant(row[k], k);
        auto out = forward_mf_jet(model, jin);
        auto r = prob.residual_of_bundle(out.u_mf, row.first(k), row[k]);
        for (double rc : r) {
            if (!std::isfinite(rc))
                throw NumericError("loss_residual",
                                   "non-finite residual at point " + std::to_string(i));
            loss += rc * rc / pts.size();
        }
    }
    return loss;
}

namespace {

struct TermScratch {
    Tape tape;
    std::vector<double> tg; // unweighted gradient of the current term
    bool want_grad = false;
};

// adds lambda * term gradient into grad, returns the weighted norm
double fold_term(TermScratch& s, double lambda, std::span<double> grad) {
    if (!s.want_grad) return 0.0;
    double n2 = 0;
    for (size_t p = 0; p < s.tg.size(); ++p) {
        n2 += s.tg[p] * s.tg[p];
        grad[p] += lambda * s.tg[p];
    }
    return lambda * std::sqrt(n2);
}

double data_term(TermScratch& s, const MfModel& model, const Dataset& ds, bool through_mf) {
    if (!s.want_grad) return plain_data_mse(model, ds, through_mf);
    std::fill(s.tg.begin(), s.tg.end(), 0.0);
    const int n = ds.size(), c = ds.out_dim;
    const double scale = 1.0 / (double(n) * c);
    double loss = 0;
    for (int i = 0; i < n; ++i) {
        auto row = ds.points[i];
        s.tape.reset(model.params, 0);
        VarId first = -1;
        for (double v : row) {
            const VarId id = s.tape.constant(v);
            if (first < 0) first = id;
        }
        auto taped = build_mf_tape(model, s.tape, {first, int(row.size())});
        const ad::Range out = through_mf ? taped.u_mf : taped.u_lf;
        auto lab = ds.label(i);
        for (int k = 0; k < c; ++k) {
            const double e = s.tape.value(out[k]).v - lab[k];
            loss += scale * e * e;
            s.tape.backward(out[k], 2.0 * scale * e, s.tg);
        }
    }
    return loss;
}

double manifold_term(TermScratch& s, const MfModel& model, const Points& pts,
                     std::span<const double> targets, int out_dim) {
    const int n = pts.size();
    const double scale = 1.0 / (double(n) * out_dim);
    double loss = 0;
    if (s.want_grad) std::fill(s.tg.begin(), s.tg.end(), 0.0);
    for (int i = 0; i < n; ++i) {
        auto row = pts[i];
        if (!s.want_grad) {
            auto out = forward_mf(model, row).u_mf;
            for (int k = 0; k < out_dim; ++k) {
                const double e = out[k] - targets[size_t(i) * out_dim + k];
                loss += scale * e * e;
            }
            continue;
        }
        s.tape.reset(model.params, 0);
        VarId first = -1;
        for (double v : row) {
            const VarId id = s.tape.constant(v);
            if (first < 0) first = id;
        }
        auto taped = build_mf_tape(model, s.tape, {first, int(row.size())});
        for (int k = 0; k < out_dim; ++k) {
            const double e = s.tape.value(taped.u_mf[k]).v - targets[size_t(i) * out_dim + k];
            loss += scale * e * e;
            s.tape.backward(taped.u_mf[k], 2.0 * scale * e, s.tg);
        }
    }
    return loss;
}

double residual_term(TermScratch& s, const MfModel& model, const Points& pts,
                     const PdeProblem& prob) {
    const int n = pts.size();
    const int k = prob.coord_dim();
    double loss = 0;
    if (s.want_grad) std::fill(s.tg.begin(), s.tg.end(), 0.0);
    std::vector<Jet> jin(k + 1);
    for (int i = 0; i < n; ++i) {
        auto row = pts[i];
        if (!s.want_grad) {
            for (int a = 0; a < k; ++a) jin[a] = Jet::seeded(row[a], a, k);
            jin[k] = Jet::constant(row[k], k);
            auto out = forward_mf_jet(model, jin);
            auto r = prob.residual_of_bundle(out.u_mf, row.first(k), row[k]);
            for (double rc : r) {
                if (!std::isfinite(rc))
                    throw NumericError("loss_residual",
                                       "non-finite residual at point " + std::to_string(i));
                loss += rc * rc / n;
            }
            continue;
        }
        s.tape.reset(model.params, k);
        const VarId first = s.tape.input(row[0], 0);
        for (int a = 1; a < k; ++a) s.tape.input(row[a], a);
        s.tape.constant(row[k]);
        auto taped = build_mf_tape(model, s.tape, {first, k + 1});
        auto rid = prob.residual_on_tape(s.tape, taped, row.first(k), row[k]);
        for (VarId id : rid) {
            const double rc = s.tape.value(id).v;
            if (!std::isfinite(rc))
                throw NumericError("loss_residual",
                                   "non-finite residual at point " + std::to_string(i));
            loss += rc * rc / n;
            s.tape.backward(id, 2.0 * rc / n, s.tg);
        }
    }
    return loss;
}

} // namespace

LossBreakdown composite_loss(const MfModel& model, const PdeProblem& prob, const Dataset* lf,
                             const Dataset* hf, const CollocationSet* colloc,
                             const LossWeights& weights, std::span<double> grad,
                             bool use_residual) {
    weights.validate();
    const size_t np = model.params.size();
    if (!grad.empty() && grad.size() != np)
        throw ContractError("composite_loss: gradient buffer size mismatch");

    TermScratch s;
    s.want_grad = !grad.empty();
    if (s.want_grad) {
        s.tg.resize(np);
        std::fill(grad.begin(), grad.end(), 0.0);
    }

    LossBreakdown bd;
    if (lf != nullptr) {
        check_dataset(model, *lf, "composite_loss[lf]");
        bd.l_lf = data_term(s, model, *lf, false);
        bd.g_lf = fold_term(s, 1.0, grad);
        bd.has_lf = true;
    }
    if (hf != nullptr) {
        check_dataset(model, *hf, "composite_loss[hf]");
        bd.l_hf = data_term(s, model, *hf, true);
        bd.g_hf = fold_term(s, weights.lambda_hf, grad);
        bd.has_hf = true;
    }
    if (colloc != nullptr) {
        const int pd = prob.coord_dim() + 1;
        if (use_residual && colloc->interior.size() > 0) {
            if (colloc->interior.dim != pd)
                throw ContractError("composite_loss: interior dim does not match problem");
            bd.l_residual = residual_term(s, model, colloc->interior, prob);
            bd.g_r = fold_term(s, weights.lambda_r, grad);
            bd.has_residual = true;
        }
        if (colloc->boundary.size() > 0) {
            bd.l_bc = manifold_term(s, model, colloc->boundary, colloc->boundary_targets,
                                    prob.out_dim);
            bd.g_bc = fold_term(s, weights.lambda_b, grad);
            bd.has_bc = true;
        }
        if (colloc->initial.size() > 0) {
            bd.l_ic = manifold_term(s, model, colloc->initial, colloc->initial_targets,
                                    prob.out_dim);
            bd.g_ic = fold_term(s, weights.lambda_ic, grad);
            bd.has_ic = true;
        }
    }

    bd.total = bd.l_lf + weights.lambda_hf * bd.l_hf + weights.lambda_r * bd.l_residual +
               weights.lambda_b * bd.l_bc + weights.lambda_ic * bd.l_ic;
    return bd;
}

LossWeights balance_weights(std::span<const LossBreakdown> history, const LossWeights& current) {
    if (history.empty()) throw ContractError("balance_weights: empty history");
    const LossBreakdown& bd = history.back();

    struct Term {
        bool has;
        double g;
        double lambda;
        double* slot; // null for the fixed-weight LF term
    };
    LossWeights next = current;
    Term terms[] = {
        {bd.has_lf, bd.g_lf, 1.0, nullptr},
        {bd.has_hf, bd.g_hf, current.lambda_hf, &next.lambda_hf},
        {bd.has_residual, bd.g_r, current.lambda_r, &next.lambda_r},
        {bd.has_bc, bd.g_bc, current.lambda_b, &next.lambda_b},
        {bd.has_ic, bd.g_ic, current.lambda_ic, &next.lambda_ic},
    };

    double sum = 0;
    int count = 0;
    for (const Term& t : terms) {
        if (!t.has) continue;
        if (t.g < 1e-12) return current; // dead or unmeasured term: do not touch anything
        sum += t.g;
        ++count;
    }
    if (count == 0) return current;
    const double mean_norm = sum / count;

    for (Term& t : terms) {
        if (!t.has || t.slot == nullptr) continue;
        const double raw = t.g / t.lambda;
        const double target = std::clamp(mean_norm / raw, 1e-2, 1e3);
        *t.slot = 0.9 * t.lambda + 0.1 * target;
    }
    return next;
}

Dataset subset_dataset(const Dataset& ds, std::span<const int> idx) {
    Dataset out;
    out.coord_names = ds.coord_names;
    out.label_names = ds.label_names;
    out.points.dim = ds.points.dim;
    out.out_dim = ds.out_dim;
    out.fidelity = ds.fidelity;
    out.noise_sd = ds.noise_sd;
    for (int i : idx) {
        if (i < 0 || i >= ds.size()) throw ContractError("subset_dataset: index out of range");
        out.points.push(ds.points[i]);
        auto lab = ds.label(i);
        out.labels.insert(out.labels.end(), lab.begin(), lab.end());
    }
    return out;
}

namespace {
void subset_points(const Points& pts, std::span<const double> targets, int out_dim,
                   std::span<const int> idx, Points& opts, std::vector<double>& otargets) {
    opts.dim = pts.dim;
    for (int i : idx) {
        if (i < 0 || i >= pts.size())
            throw ContractError("subset_collocation: index out of range");
        opts.push(pts[i]);
        for (int k = 0; k < out_dim; ++k)
            if (!targets.empty()) otargets.push_back(targets[size_t(i) * out_dim + k]);
    }
}
} // namespace

CollocationSet subset_collocation(const CollocationSet& cs, std::span<const int> interior,
                                  std::span<const int> boundary, std::span<const int> initial) {
    CollocationSet out;
    out.interior.dim = cs.interior.dim;
    out.boundary.dim = cs.boundary.dim;
    out.initial.dim = cs.initial.dim;
    const int bt = cs.boundary.size() > 0
                       ? int(cs.boundary_targets.size() / size_t(cs.boundary.size()))
                       : 0;
    const int it = cs.initial.size() > 0
                       ? int(cs.initial_targets.size() / size_t(cs.initial.size()))
                       : 0;
    for (int i : interior) {
        if (i < 0 || i >= cs.interior.size())
            throw ContractError("subset_collocation: index out of range");
        out.interior.push(cs.interior[i]);
    }
    subset_points(cs.boundary, cs.boundary_targets, bt, boundary, out.boundary,
                  out.boundary_targets);
    subset_points(cs.initial, cs.initial_targets, it, initial, out.initial,
                  out.initial_targets);
    return out;
}

} // namespace mfb
