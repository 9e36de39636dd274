#pragma once

#include <span>
#include <vector>

#include "network.hpp"
#include "pde.hpp"
#include "solvers.hpp"

namespace mfb {

struct LossWeights {
    double lambda_hf = 10.0;
    double lambda_r = 1.0;
    double lambda_b = 10.0;
    double lambda_ic = 10.0;

    void validate() const;
};

/// One evaluation of the composite objective. The g_* fields are gradient
/// norms of the weighted terms (lambda_i * L_i; the LF weight is fixed at 1)
/// and are filled only when a gradient buffer is supplied. has_* marks terms
/// that were actually evaluated.
struct LossBreakdown {
    double l_lf = 0, l_hf = 0, l_residual = 0, l_bc = 0, l_ic = 0;
    double total = 0;
    double g_lf = 0, g_hf = 0, g_r = 0, g_bc = 0, g_ic = 0;
    bool has_lf = false, has_hf = false, has_residual = false, has_bc = false, has_ic = false;
};

/// Mean squared error of the LF head over the low-fidelity samples.
double loss_lf(const MfModel& model, const Dataset& lf);

/// Mean squared error of the composite output over the high-fidelity samples.
double loss_hf(const MfModel& model, const Dataset& hf);

/// Mean squared residual vector norm of the composite output at the interior
/// collocation points.
double loss_residual(const MfModel& model, const CollocationSet& colloc,
                     const PdeProblem& prob);

/// Full objective with optional gradient. Null pointers drop the matching
/// terms (boundary/initial terms come with `colloc`; `use_residual = false`
/// keeps those but skips the interior residual). `grad` must be empty or
/// n_params long; when given it receives d total / d params and the weighted
/// per-term gradient norms are recorded in the breakdown.
LossBreakdown composite_loss(const MfModel& model, const PdeProblem& prob, const Dataset* lf,
                             const Dataset* hf, const CollocationSet* colloc,
                             const LossWeights& weights, std::span<double> grad = {},
                             bool use_residual = true);

/// Gradient-norm balancing driven by the newest breakdown: each present term
/// moves toward clip(mean_norm / raw_norm_i, [1e-2, 1e3]) under 0.9 smoothing,
/// where raw_norm_i = g_i / lambda_i and mean_norm averages the weighted norms
/// of all present terms (LF included). Any present norm below 1e-12 returns
/// the current weights untouched. Only weights of present terms change.
LossWeights balance_weights(std::span<const LossBreakdown> history, const LossWeights& current);

Dataset subset_dataset(const Dataset& ds, std::span<const int> idx);
CollocationSet subset_collocation(const CollocationSet& cs, std::span<const int> interior,
                                  std::span<const int> boundary, std::span<const int> initial);

} // namespace mfb
